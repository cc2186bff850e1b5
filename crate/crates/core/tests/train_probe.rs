//! Development probe: full default-regimen training on one toy image.
//! Prints losses and end-to-end protection quality. Run with --nocapture.

use tarpro_core::editor::{EditorConfig, EditorModel};
use tarpro_core::metrics::{psnr, ssim, MetricConfig};
use tarpro_core::toyworld::{build_world, WorldConfig};
use tarpro_core::trainer::{protect, train, TrainConfig};

#[test]
#[ignore = "development probe, run manually"]
fn probe_default_training() {
    let world = build_world::<f32>(&WorldConfig::default()).unwrap();
    let editor = &world.editor;
    let img = &world.images[0];
    let cfg = TrainConfig::default();

    let t0 = std::time::Instant::now();
    let (params, history) = train(
        core::slice::from_ref(img),
        &world.train_prompts,
        editor,
        &cfg,
    )
    .unwrap();
    println!("training took {:?}", t0.elapsed());

    for r in history.records.iter().step_by(15) {
        println!(
            "step {:3}  adv {:.5}  reg {:.6}  total {:.5}  |g| {:.4}",
            r.step, r.adv, r.reg, r.total, r.grad_norm
        );
    }
    let last = history.records.last().unwrap();
    println!(
        "first total {:.5}  last total {:.5}",
        history.records[0].total, last.total
    );

    let protected = protect(img, &params, cfg.budget).unwrap();
    let mcfg = MetricConfig::default();
    println!(
        "perturb: ssim {:.4} psnr {:.2}",
        ssim(&protected, img, &mcfg).unwrap(),
        psnr(&protected, img, &mcfg).unwrap()
    );

    // anatomy of the learned delta: total size and sentinel alignment
    let delta = tarpro_core::generator::generate(img, &params, cfg.budget).unwrap();
    let d = delta.data().data();
    let eta = cfg.budget.eta;
    let mean_abs: f64 = d.iter().map(|&v| (v as f64).abs()).sum::<f64>() / d.len() as f64;
    let max_abs: f64 = d.iter().map(|&v| (v as f64).abs()).fold(0.0, f64::max);
    // per-patch projection onto the plain checkerboard and the remainder
    let (c, h, w) = img.shape();
    let mut aligned_energy = 0.0f64;
    let mut total_energy = 0.0f64;
    for ty in 0..h / 8 {
        for tx in 0..w / 8 {
            let mut dot = 0.0f64;
            let mut norm2 = 0.0f64;
            for ch in 0..c {
                for y in 0..8 {
                    for x in 0..8 {
                        let v = d[ch * h * w + (ty * 8 + y) * w + tx * 8 + x] as f64;
                        let sign = if (y + x) % 2 == 0 { 1.0 } else { -1.0 };
                        dot += sign * v;
                        norm2 += v * v;
                    }
                }
            }
            aligned_energy += dot * dot / 192.0;
            total_energy += norm2;
        }
    }
    println!(
        "delta: mean|d| {:.4}eta max|d| {:.4}eta checker-aligned {:.1}%",
        mean_abs / eta,
        max_abs / eta,
        100.0 * aligned_energy / total_energy
    );

    let ecfg = EditorConfig::default();
    let mut flagged_prot = 0;
    let mut flagged_unprot = 0;
    let mut mal_ssim = 0.0;
    let mut nor_ssim = 0.0;
    let mals = world.eval_prompts.maliciouses();
    let nors = world.eval_prompts.normals();
    for m in mals {
        let e_prot = editor.edit(&protected, m, &ecfg).unwrap();
        let e_unprot = editor.edit(img, m, &ecfg).unwrap();
        if editor.nsfw_score(&e_prot) > 0.5 {
            flagged_prot += 1;
        }
        if editor.nsfw_score(&e_unprot) > 0.5 {
            flagged_unprot += 1;
        }
        let parent = world.eval_prompts.parent_of(m).unwrap();
        let target = editor.edit(img, parent, &ecfg).unwrap();
        mal_ssim += ssim(&e_prot, &target, &mcfg).unwrap();
    }
    for p in nors {
        let e_prot = editor.edit(&protected, p, &ecfg).unwrap();
        let e_clean = editor.edit(img, p, &ecfg).unwrap();
        nor_ssim += ssim(&e_prot, &e_clean, &mcfg).unwrap();
    }
    println!(
        "nsfw: protected {}/{} unprotected {}/{}",
        flagged_prot,
        mals.len(),
        flagged_unprot,
        mals.len()
    );
    println!(
        "mal-vs-target ssim {:.4}  normal-preservation ssim {:.4}",
        mal_ssim / mals.len() as f64,
        nor_ssim / nors.len() as f64
    );
}
