//! Development probe: prints the calibrated quantities of the shipped toy
//! world so gain constants can be sanity-checked. Run with --nocapture.

use tarpro_core::editor::{make_malicious, EditorConfig, EditorModel};
use tarpro_core::metrics::{psnr, ssim, MetricConfig};
use tarpro_core::toyworld::{build_world, generate_scene, WorldConfig};
use tarpro_core::{Image, PerturbationBudget, Seed, Tensor};

#[test]
#[ignore = "development probe, run manually"]
fn probe_world_calibration() {
    let cfg = WorldConfig::default();
    let world = build_world::<f32>(&cfg).unwrap();
    let editor = &world.editor;
    let ecfg = EditorConfig::default();

    println!("gate = {:?}", editor.params.gate.data());
    println!("inject = {:?}", editor.params.inject.data());
    println!("scorer logit = {:?}", editor.scorer.logit.data());

    // autoencoder quality on held-out scenes
    let mut worst = 0.0f64;
    let mut mean_mse = 0.0f64;
    for i in 0..16u64 {
        let img: Image<f32> = generate_scene(Seed(777).derive(i), cfg.image_size);
        let mse = editor.reconstruction_loss(&img).unwrap();
        mean_mse += mse;
        worst = worst.max(mse);
    }
    println!("recon mse: mean {:.6} worst {:.6}", mean_mse / 16.0, worst);

    // clean sentinel band and reachability under the budget
    let eta = PerturbationBudget::default().eta;
    let pd = 192.0;
    println!("max sentinel shift = {:.3}", 4.0 * eta * pd);

    // flag rates
    let mcfg = MetricConfig::default();
    let mut flagged_mal = 0;
    let mut flagged_nor = 0;
    let mut n = 0;
    let mut resp_mal = 0.0;
    let mut resp_nor = 0.0;
    for img in &world.images {
        for m in world.eval_prompts.maliciouses().iter().take(4) {
            let e = editor.edit(img, m, &ecfg).unwrap();
            let s = editor.nsfw_score(&e);
            resp_mal += editor.pooled_filter_response(&e);
            if s > mcfg.nsfw_threshold {
                flagged_mal += 1;
            }
            n += 1;
        }
        for p in world.eval_prompts.normals().iter().take(4) {
            let e = editor.edit(img, p, &ecfg).unwrap();
            let s = editor.nsfw_score(&e);
            resp_nor += editor.pooled_filter_response(&e);
            if s > mcfg.nsfw_threshold {
                flagged_nor += 1;
            }
        }
    }
    println!(
        "malicious flag rate {}/{n}, normal flag rate {}/{n}",
        flagged_mal, flagged_nor
    );
    println!(
        "pooled response: malicious {:.4} normal {:.4}",
        resp_mal / n as f64,
        resp_nor / n as f64
    );

    // edit visibility: how different are normal edits from the original
    let img = &world.images[0];
    let p0 = &world.eval_prompts.normals()[0];
    let edited = editor.edit(img, p0, &ecfg).unwrap();
    println!(
        "normal edit vs original: ssim {:.4} psnr {:.2}",
        ssim(&edited, img, &mcfg).unwrap(),
        psnr(&edited, img, &mcfg).unwrap()
    );

    // hand-built protection at several amplitudes: push the sentinel down
    // with the checkerboard pattern and see whether malicious edits lose
    // their texture
    let (c, h, w) = img.shape();
    for amp_frac in [0.1f64, 0.15, 0.2, 0.3] {
        let mut delta = Tensor::<f32>::zeros(&[c, h, w]);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let sign = if (y + x) % 2 == 0 { -1.0 } else { 1.0 };
                    delta.data_mut()[ch * h * w + y * w + x] = (amp_frac * eta * sign) as f32;
                }
            }
        }
        let pert = tarpro_core::Perturbation::new(delta, PerturbationBudget::default()).unwrap();
        let protected = tarpro_core::apply_perturbation(img, &pert).unwrap();
        let mal = &world.eval_prompts.maliciouses()[0];
        let e_prot = editor.edit(&protected, mal, &ecfg).unwrap();
        let e_unprot = editor.edit(img, mal, &ecfg).unwrap();
        let parent = world.eval_prompts.parent_of(mal).unwrap();
        let target = editor.edit(img, parent, &ecfg).unwrap();
        let e_prot_nor = editor.edit(&protected, parent, &ecfg).unwrap();
        println!(
            "amp {:.2}eta: perturb ssim {:.4} psnr {:.2} | mal score {:.4} -> {:.4} | mal-vs-target ssim {:.4} | normal ssim {:.4}",
            amp_frac,
            ssim(&protected, img, &mcfg).unwrap(),
            psnr(&protected, img, &mcfg).unwrap(),
            editor.nsfw_score(&e_unprot),
            editor.nsfw_score(&e_prot),
            ssim(&e_prot, &target, &mcfg).unwrap(),
            ssim(&e_prot_nor, &target, &mcfg).unwrap(),
        );
    }

    // what a strength-1 malicious prompt looks like
    let nor = world.eval_prompts.normals()[1].clone();
    let mal1 = make_malicious(&nor, &world.nsfw_direction, 1.0).unwrap();
    let e1 = editor.edit(img, &mal1, &ecfg).unwrap();
    println!("strength-1 malicious score {:.4}", editor.nsfw_score(&e1));
}
