use jointdrive::controller::PredictedVehicle;
use jointdrive::render::{attention_svg, overlay_svg, OverlayView};
use jointdrive_sim::{generate, Pose, Vec2, World};

#[test]
fn attention_heat_map_has_one_cell_per_token() {
    let heat: Vec<f64> = (0..36).map(|k| k as f64 / 35.0).collect();
    let crop = vec![0.0; 16 * 24 * 24];
    let svg = attention_svg(&heat, 6, &crop, 24).unwrap();
    assert_eq!(svg.matches("class=\"heat-cell\"").count(), 36);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert_eq!(svg, attention_svg(&heat, 6, &crop, 24).unwrap());
    assert!(attention_svg(&heat[..35], 6, &crop, 24).is_err());
    assert!(attention_svg(&heat, 6, &crop[..10], 24).is_err());
}

#[test]
fn overlay_draws_every_vehicle_and_trajectory() {
    let world = World::new(&generate(3, 1)).unwrap();
    let snapshot = world.snapshot(world.ego_id()).unwrap();
    let plan: Vec<Vec2> = (1..=10).map(|k| Vec2::new(k as f64, 0.0)).collect();
    let predictions: Vec<PredictedVehicle> = snapshot
        .vehicles
        .iter()
        .filter(|v| v.id != snapshot.ego_id)
        .take(3)
        .map(|v| PredictedVehicle {
            id: v.id,
            pose: Pose::new(5.0, 1.0, 0.2),
            length: v.length,
            width: v.width,
            trajectory: plan.clone(),
        })
        .collect();
    let view = OverlayView {
        snapshot: &snapshot,
        plan: &plan,
        predictions: &predictions,
        extent: 40.0,
    };
    let svg = overlay_svg(&view).unwrap();
    assert_eq!(svg.matches("class=\"plan\"").count(), 1);
    assert_eq!(svg.matches("class=\"prediction\"").count(), predictions.len());
    assert_eq!(svg.matches("class=\"vehicle ego\"").count(), 1);
    assert_eq!(svg.matches("<polygon").count(), snapshot.vehicles.len());
    assert_eq!(svg, overlay_svg(&view).unwrap());
}
