use std::collections::HashMap;

use clicklift_core::clicksim::simulate_frame_clicks;
use clicklift_core::ile::iou;
use clicklift_core::maskprovider::{get_mask, MaskNoise, MaskRequest, SyntheticOracle};
use clicklift_core::pipeline::PipelineConfig;
use clicklift_core::plg::{color_lift, generate_pseudo_label, FrameContext};
use clicklift_core::synthgen::{generate_sequence, random_scene, Owner, RandomSceneOptions};

struct Tally {
    clicks: usize,
    accepted: Vec<f64>,
    /// (rescued, direct) IoU for instances whose direct lift reaches a wall.
    wall: Vec<(f64, f64)>,
}

fn run(seeds: std::ops::Range<u64>, bleed: u32) -> Tally {
    let cfg = PipelineConfig::default().plg;
    let mut tally = Tally {
        clicks: 0,
        accepted: Vec::new(),
        wall: Vec::new(),
    };
    for seed in seeds {
        let spec = random_scene(&RandomSceneOptions {
            seed,
            ..Default::default()
        })
        .unwrap();
        let seq = generate_sequence(&spec).unwrap();
        let frame = &seq.frames[0];
        let points = frame.positions();
        let ctx = FrameContext::new(frame.frame_id.clone(), points.clone(), spec.camera.clone()).unwrap();
        let noise = MaskNoise {
            bleed_pixels: bleed,
            composite_merge: true,
        };
        let oracle = SyntheticOracle::new(HashMap::from([(frame.frame_id.clone(), frame.masks.clone())]), noise);
        for click in simulate_frame_clicks(&frame.frame_id, 0, &points, &frame.gt, 0.0, seed).unwrap() {
            tally.clicks += 1;
            let gt = frame.gt.instance_points(click.instance_id);
            let outcome = generate_pseudo_label(&ctx, &click, &oracle, &cfg).unwrap();
            if !outcome.is_accepted() {
                continue;
            }
            let rescued = iou(&outcome.label_indices, &gt);
            tally.accepted.push(rescued);

            let pixel = ctx.pixel_of[click.resolved_point_index.unwrap()].unwrap();
            let request = MaskRequest {
                frame_id: frame.frame_id.clone(),
                pixel: pixel.cell(),
                class_id: click.class_id,
            };
            let mask = get_mask(&oracle, &request).unwrap().unwrap();
            let lifted = color_lift(&mask, &ctx.projected, ctx.image_size()).unwrap();
            if lifted.iter().any(|&i| matches!(frame.owners[i], Owner::Wall(_))) {
                tally.wall.push((rescued, iou(&lifted, &gt)));
            }
        }
    }
    tally
}

#[test]
fn clean_masks_give_near_exact_labels() {
    let t = run(0..5, 0);
    assert_eq!(t.clicks, 50);
    assert!(
        t.accepted.len() * 100 >= 95 * t.clicks,
        "{} of {}",
        t.accepted.len(),
        t.clicks
    );
    assert!(t.accepted.iter().all(|&v| v >= 0.9), "{:?}", t.accepted);
}

#[test]
fn clustering_removes_wall_bleed() {
    let t = run(5..10, 3);
    assert!(!t.wall.is_empty());
    let n = t.wall.len() as f64;
    let rescued = t.wall.iter().map(|w| w.0).sum::<f64>() / n;
    let direct = t.wall.iter().map(|w| w.1).sum::<f64>() / n;
    assert!(t.wall.iter().all(|w| w.0 >= 0.9));
    assert!(direct + 0.1 < rescued, "rescued {rescued} direct {direct}");
}
