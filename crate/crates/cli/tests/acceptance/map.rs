use std::collections::HashSet;

use stsm_core::ModelConfig;
use stsm_data::{generate_scene, roster, SceneConfig, SceneCube};
use stsm_harness::oracle::{template_oracle_model, NearestTemplate};
use stsm_harness::{render_map, ClassMap};

use crate::{ensure, err};

/// The legend colors, in class id order.
const LEGEND: [[u8; 3]; 11] = [
    [1, 62, 2],
    [149, 156, 112],
    [20, 139, 61],
    [93, 117, 43],
    [179, 137, 51],
    [226, 206, 136],
    [108, 163, 138],
    [231, 174, 103],
    [166, 171, 174],
    [221, 32, 38],
    [76, 112, 164],
];

fn clean_scene(t: usize) -> Result<SceneCube, String> {
    let cfg = SceneConfig {
        height: 80,
        width: 72,
        time_steps: t,
        noise_level: 0.0,
        mixing_width: 0,
        region_size: 12,
    };
    generate_scene(21, &roster(), &cfg).map_err(err)
}

/// Interior pixels use legend colors only; the border is black and unlabeled.
fn check_colors(map: &ClassMap, patch: usize) -> Result<usize, String> {
    let legend: HashSet<[u8; 3]> = LEGEND.into_iter().collect();
    let r = patch / 2;
    let mut interior = 0;
    for y in 0..map.height {
        for x in 0..map.width {
            let border = y < r || x < r || y + r >= map.height || x + r >= map.width;
            let px = map.pixel(y, x);
            if border {
                ensure(px == [0, 0, 0] && map.classes[y * map.width + x].is_none(), || {
                    format!("border pixel ({y}, {x}) painted")
                })?;
            } else {
                ensure(legend.contains(&px), || format!("pixel ({y}, {x}) has color {px:?}"))?;
                interior += 1;
            }
        }
    }
    Ok(interior)
}

pub fn run() -> Result<String, String> {
    let classes = roster();
    let palette: Vec<[u8; 3]> = classes.iter().map(|c| c.color).collect();
    ensure(palette == LEGEND, || "roster colors differ from the legend".into())?;

    let t = 23;
    let scene = clean_scene(t)?;
    let oracle = NearestTemplate {
        templates: classes.iter().map(|c| c.profile(t)).collect(),
        time_steps: t,
        channels: 6,
        patch: 13,
    };
    let (map, report) = render_map(&oracle, &scene, &palette).map_err(err)?;
    let interior = check_colors(&map, 13)?;
    let r = 6;
    for y in r..scene.height - r {
        for x in r..scene.width - r {
            let want = LEGEND[scene.label(y, x) as usize - 1];
            ensure(map.pixel(y, x) == want, || format!("pixel ({y}, {x}) does not match its label"))?;
        }
    }
    ensure(report.oa == 1.0, || format!("oracle map OA {}", report.oa))?;

    // the same check through the network forward pass
    let cfg = ModelConfig {
        time_steps: 4,
        stem_features: 11,
        hidden_dim: 4,
        state_dim: 2,
        ..ModelConfig::default()
    };
    let small = clean_scene(4)?;
    let templates: Vec<Vec<f32>> = classes.iter().map(|c| c.profile(4)).collect();
    let model = template_oracle_model(&cfg, &templates).map_err(err)?;
    let (net_map, net_report) = render_map(&model, &small, &palette).map_err(err)?;
    let net_interior = check_colors(&net_map, cfg.height)?;
    ensure(net_report.oa == 1.0, || format!("network oracle map OA {}", net_report.oa))?;
    Ok(format!(
        "{interior} interior pixels exact for the template oracle, {net_interior} for the network oracle"
    ))
}
