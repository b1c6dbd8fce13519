//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! with its time budget, and exits non-zero if any criterion fails.

// `!(x <= tol)` is deliberate: NaN must fail.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vmstain_core::backends::{BackendSpec, ExternalSpec};
use vmstain_core::colorspace::{hsv_to_rgb, rgb_to_hsv, rotate_hue, RgbPixel};
use vmstain_core::losses::{total_loss, value_loss, value_loss_gradient, LossComponents, LossWeights};
use vmstain_core::metrics::{histogram_correlation, seam_discontinuity};
use vmstain_core::patchgrid::{plan_grid, split, GridSpec, PatchRecord};
use vmstain_core::pipeline::process_image;
use vmstain_core::tiling::{blend_naive, blend_parallel, blend_streaming, build_weight_matrix, hard_tile};
use vmstain_core::PlanarImage;

type Outcome = Result<String, String>;
type Criterion = (&'static str, u64, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn random_rgb8(rng: &mut ChaCha8Rng, h: usize, w: usize) -> PlanarImage {
    let mut bytes = vec![0u8; 3 * h * w];
    rng.fill(&mut bytes[..]);
    PlanarImage::from_rgb8(h, w, &bytes).unwrap()
}

fn grid_arithmetic() -> Outcome {
    let spec = GridSpec::square(4608, 512, 128).map_err(|e| e.to_string())?;
    let origins = plan_grid(&spec);
    ensure!(origins.len() == 1089, "N = {}", origins.len());
    let w = build_weight_matrix(&spec).map_err(|e| e.to_string())?;
    let mut interior_blocks = 0;
    for br in 0..36 {
        for bc in 0..36 {
            let v = w.get(br * 128, bc * 128);
            for r in br * 128..(br + 1) * 128 {
                for c in bc * 128..(bc + 1) * 128 {
                    ensure!(w.get(r, c) == v, "block ({br},{bc}) not constant at ({r},{c})");
                }
            }
            if (3..33).contains(&br) && (3..33).contains(&bc) {
                ensure!(v == 1.0 / 16.0, "interior block ({br},{bc}) weight {v}");
                interior_blocks += 1;
            }
        }
    }
    Ok(format!("N=1089, 36x36 constant blocks, {interior_blocks} interior blocks at 1/16"))
}

/// Patch origins along one axis, enumerated directly.
fn axis_origins(len: usize, n: usize, m: usize) -> Vec<usize> {
    (0..).map(|k| k * m).take_while(|o| o + n <= len).collect()
}

fn random_spec(rng: &mut ChaCha8Rng, max_len: usize) -> GridSpec {
    loop {
        let m = rng.random_range(1..=32);
        let n = m * rng.random_range(1..=8);
        if n > max_len {
            continue;
        }
        let steps = (max_len - n) / m;
        let h = n + m * rng.random_range(0..=steps);
        let w = n + m * rng.random_range(0..=steps);
        return GridSpec::new(h, w, n, m).unwrap();
    }
}

fn partition_of_unity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let mut full = 0;
    for _ in 0..200 {
        let spec = random_spec(&mut rng, 512);
        let w = build_weight_matrix(&spec).map_err(|e| e.to_string())?;
        let (h, wd, n, m) = (spec.height, spec.width, spec.patch, spec.stride);
        let rows = axis_origins(h, n, m);
        let cols = axis_origins(wd, n, m);
        if rows.len() * cols.len() * n * n <= 2_000_000 {
            // sum the weight over every patch placement
            full += 1;
            let mut sum = vec![0.0f64; h * wd];
            for &r0 in &rows {
                for &c0 in &cols {
                    for r in r0..r0 + n {
                        for c in c0..c0 + n {
                            sum[r * wd + c] += w.get(r, c);
                        }
                    }
                }
            }
            worst = sum.iter().fold(worst, |acc, s| acc.max((s - 1.0).abs()));
        } else {
            let count = |o: &[usize], x: usize| o.iter().filter(|&&s| s <= x && x < s + n).count();
            let rc: Vec<usize> = (0..h).map(|r| count(&rows, r)).collect();
            let cc: Vec<usize> = (0..wd).map(|c| count(&cols, c)).collect();
            for r in 0..h {
                for c in 0..wd {
                    let covering = rc[r] * cc[c];
                    let mut s = 0.0;
                    for _ in 0..covering {
                        s += w.get(r, c);
                    }
                    worst = worst.max((s - 1.0).abs());
                }
            }
        }
    }
    ensure!(worst <= 1e-12, "max |sum - 1| = {worst:e}");
    Ok(format!("200 specs ({full} by full placement), max |sum - 1| = {worst:.1e}"))
}

fn end_to_end_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = random_rgb8(&mut rng, 1024, 1024);
    let out = process_image(&img, 128, 32, &BackendSpec::Identity, 0, 4).map_err(|e| e.to_string())?;
    let same = out.image.to_rgb8() == img.to_rgb8();
    ensure!(same, "8-bit output differs from input");
    let drift = out.image.max_abs_diff(&img).map_err(|e| e.to_string())?;
    Ok(format!("1024x1024, n=128 m=32: bytes identical, float drift {drift:.1e}"))
}

fn streaming_matches_naive() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let spec = random_spec(&mut rng, 64);
        let w = build_weight_matrix(&spec).map_err(|e| e.to_string())?;
        let mut patches: Vec<PatchRecord> = plan_grid(&spec)
            .into_iter()
            .map(|origin| PatchRecord {
                origin,
                pixels: PlanarImage::from_fn(spec.patch, spec.patch, |_, _| {
                    [rng.random(), rng.random(), rng.random()]
                })
                .unwrap(),
            })
            .collect();
        let naive = blend_naive(&patches, &w).map_err(|e| e.to_string())?.image;
        let mut candidates = Vec::new();
        for workers in [1, 2, 8] {
            patches.shuffle(&mut rng);
            candidates.push(blend_streaming(patches.iter().cloned(), &spec).map_err(|e| e.to_string())?.image);
            candidates.push(blend_parallel(&patches, &spec, workers).map_err(|e| e.to_string())?.image);
        }
        for c in &candidates {
            worst = worst.max(c.max_abs_diff(&naive).map_err(|e| e.to_string())?);
        }
    }
    ensure!(worst <= 1e-9, "max |streaming - naive| = {worst:e}");
    Ok(format!("50 instances, 3 orders, workers 1/2/8: max diff {worst:.1e}"))
}

fn hsv_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let (r, g, b) = (rng.random(), rng.random(), rng.random());
        let back = hsv_to_rgb(rgb_to_hsv(RgbPixel::new(r, g, b).unwrap())).to_array();
        for (x, y) in [r, g, b].into_iter().zip(back) {
            worst = worst.max((x - y).abs());
        }
    }
    ensure!(worst <= 1e-6, "round trip error {worst:e}");
    let corners = [
        ("red", [1.0, 0.0, 0.0], [0.0, 1.0, 1.0]),
        ("green", [0.0, 1.0, 0.0], [120.0, 1.0, 1.0]),
        ("blue", [0.0, 0.0, 1.0], [240.0, 1.0, 1.0]),
        ("gray", [0.5, 0.5, 0.5], [0.0, 0.0, 0.5]),
        ("black", [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]),
        ("white", [1.0, 1.0, 1.0], [0.0, 0.0, 1.0]),
    ];
    for (name, [r, g, b], expect) in corners {
        let hsv = rgb_to_hsv(RgbPixel::new(r, g, b).unwrap());
        ensure!([hsv.h(), hsv.s(), hsv.v()] == expect, "{name}: got {:?}", [hsv.h(), hsv.s(), hsv.v()]);
        let back = hsv_to_rgb(hsv).to_array();
        ensure!(back == [r, g, b], "{name}: back to {back:?}");
    }
    Ok(format!("1e5 pixels max error {worst:.1e}, 6 corner cases exact"))
}

/// Pair whose value channels have a clear argmax and never coincide.
fn tie_free_pair(rng: &mut ChaCha8Rng, size: usize, gap: f64) -> (PlanarImage, PlanarImage) {
    let x = PlanarImage::from_fn(size, size, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap();
    let gx = PlanarImage::from_fn(size, size, |r, c| loop {
        let px: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let mut sorted = px;
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let vx = x.pixel(r, c).into_iter().fold(0.0, f64::max);
        if sorted[0] - sorted[1] > gap && (sorted[0] - vx).abs() > gap && sorted[0] + gap < 1.0 && sorted[2] > gap {
            break px;
        }
    })
    .unwrap();
    (x, gx)
}

fn nudged(img: &PlanarImage, ch: usize, r: usize, c: usize, delta: f64) -> PlanarImage {
    let mut data = img.as_slice().to_vec();
    data[ch * img.area() + r * img.width() + c] += delta;
    PlanarImage::from_planes(img.height(), img.width(), data).unwrap()
}

fn value_loss_gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (x, gx) = tie_free_pair(&mut rng, 8, 1e-3);
        let grad = value_loss_gradient(&x, &gx).map_err(|e| e.to_string())?;
        ensure!(grad.ties.is_empty(), "unexpected ties {:?}", grad.ties);
        for ch in 0..3 {
            for r in 0..8 {
                for c in 0..8 {
                    let plus = value_loss(&x, &nudged(&gx, ch, r, c, h)).map_err(|e| e.to_string())?;
                    let minus = value_loss(&x, &nudged(&gx, ch, r, c, -h)).map_err(|e| e.to_string())?;
                    let numeric = (plus - minus) / (2.0 * h);
                    let analytic = grad.at(ch, r, c);
                    let scale = analytic.abs().max(numeric.abs());
                    if scale > 0.0 {
                        worst = worst.max((analytic - numeric).abs() / scale);
                    }
                }
            }
        }
    }
    ensure!(worst <= 1e-4, "max relative error {worst:e}");
    Ok(format!("100 pairs, max relative error {worst:.1e}"))
}

fn loss_assembly() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let c = LossComponents {
            adv_ab: rng.random_range(-5.0..0.0),
            adv_ba: rng.random_range(-5.0..0.0),
            cycle: rng.random(),
            value_a: rng.random(),
            value_b: rng.random(),
        };
        let (lc, lv) = (rng.random_range(0.0..20.0), rng.random_range(0.0..20.0));
        let report = total_loss(c, LossWeights::new(lc, lv).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let expect = c.adv_ab + c.adv_ba + lc * c.cycle + lv * c.value_a + lv * c.value_b;
        worst = worst.max((report.total - expect).abs());
    }
    ensure!(worst <= 1e-9, "total differs by {worst:e}");
    let mut hue_worst: f64 = 0.0;
    for _ in 0..50 {
        let img = PlanarImage::from_fn(32, 32, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap();
        let rotated = rotate_hue(&img, rng.random_range(0.0..360.0));
        hue_worst = hue_worst.max(value_loss(&img, &rotated).map_err(|e| e.to_string())?);
    }
    ensure!(hue_worst <= 1e-9, "hue-rotated value loss {hue_worst:e}");
    Ok(format!("1000 totals max diff {worst:.1e}; 50 hue rotations max value loss {hue_worst:.1e}"))
}

fn smooth_slide(rng: &mut ChaCha8Rng, size: usize) -> PlanarImage {
    let phase: [f64; 3] = [rng.random::<f64>() * 6.3, rng.random::<f64>() * 6.3, rng.random::<f64>() * 6.3];
    let freq = rng.random_range(0.5..2.0) * std::f64::consts::TAU / size as f64;
    PlanarImage::from_fn(size, size, |r, c| {
        let mut px = [0.0; 3];
        for ch in 0..3 {
            px[ch] = 0.5 + 0.25 * (freq * r as f64 + phase[ch]).sin() * (freq * c as f64 + phase[ch]).cos();
        }
        px
    })
    .unwrap()
}

fn jittered(img: &PlanarImage, spec: &GridSpec, rng: &mut ChaCha8Rng) -> Vec<PatchRecord> {
    split(img, spec)
        .unwrap()
        .into_iter()
        .map(|mut p| {
            let g: f64 = rng.random_range(0.9..=1.1);
            p.pixels = p.pixels.map_pixels(|px| px.map(|v| v * g));
            p
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = v.len() / 2;
    if v.len().is_multiple_of(2) { 0.5 * (v[k - 1] + v[k]) } else { v[k] }
}

fn seam_reduction() -> Outcome {
    let (size, n, m) = (256, 64, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let hard_spec = GridSpec::square(size, n, n).unwrap();
    let conf_spec = GridSpec::square(size, n, m).unwrap();
    let (mut hard_s, mut conf_s, mut wins) = (Vec::new(), Vec::new(), 0);
    for _ in 0..100 {
        let img = smooth_slide(&mut rng, size);
        let hard = hard_tile(&jittered(&img, &hard_spec, &mut rng), size, size, n).map_err(|e| e.to_string())?;
        let conf = blend_streaming(jittered(&img, &conf_spec, &mut rng), &conf_spec).map_err(|e| e.to_string())?;
        let h = seam_discontinuity(&hard.image, n).map_err(|e| e.to_string())?;
        let c = seam_discontinuity(&conf.image, n).map_err(|e| e.to_string())?;
        wins += usize::from(c < h);
        hard_s.push(h);
        conf_s.push(c);
    }
    let (mh, mc) = (median(hard_s), median(conf_s));
    let ratio = mc / mh;
    ensure!(wins == 100, "confidence blending lower in only {wins}/100 trials");
    ensure!(ratio <= 0.2, "median ratio {ratio:.3} (conf {mc:.2e}, hard {mh:.2e})");
    Ok(format!("100/100 wins, median seam {mc:.2e} vs {mh:.2e} (ratio {ratio:.3})"))
}

fn pearson_oracle(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va.sqrt() * vb.sqrt())
}

fn counts(values: &[u8]) -> Vec<f64> {
    let mut h = vec![0.0; 256];
    for &v in values {
        h[v as usize] += 1.0;
    }
    h
}

fn metrics_sanity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut self_worst: f64 = 0.0;
    for _ in 0..20 {
        let img = random_rgb8(&mut rng, 48, 40);
        let corr = histogram_correlation(&img, &img).map_err(|e| e.to_string())?;
        self_worst = self_worst.max((corr - 1.0).abs());
    }
    ensure!(self_worst <= 1e-12, "self correlation off by {self_worst:e}");
    let mut oracle_worst: f64 = 0.0;
    for _ in 0..20 {
        // A draws from the lower half of the codes, B from the upper half
        let (h, w) = (24, 24);
        let low: Vec<u8> = (0..3 * h * w).map(|_| rng.random_range(0..128)).collect();
        let high: Vec<u8> = (0..3 * h * w).map(|_| rng.random_range(128..=255)).collect();
        let a = PlanarImage::from_rgb8(h, w, &low).unwrap();
        let b = PlanarImage::from_rgb8(h, w, &high).unwrap();
        let mut expect = 0.0;
        for ch in 0..3 {
            let ca: Vec<u8> = low.iter().skip(ch).step_by(3).copied().collect();
            let cb: Vec<u8> = high.iter().skip(ch).step_by(3).copied().collect();
            expect += pearson_oracle(&counts(&ca), &counts(&cb)) / 3.0;
        }
        let got = histogram_correlation(&a, &b).map_err(|e| e.to_string())?;
        oracle_worst = oracle_worst.max((got - expect).abs());
    }
    ensure!(oracle_worst <= 1e-12, "disjoint-support correlation off by {oracle_worst:e}");
    Ok(format!("self {self_worst:.1e}, disjoint vs oracle {oracle_worst:.1e}"))
}

fn gain_backend(args: &[&str]) -> BackendSpec {
    let mut command = vec![env!("CARGO_BIN_EXE_vmstain-gain-backend").to_string()];
    command.extend(args.iter().map(|s| s.to_string()));
    let mut spec = ExternalSpec::new(command);
    spec.timeout_secs = 10.0;
    BackendSpec::External(spec)
}

fn external_protocol() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let img = random_rgb8(&mut rng, 96, 80);
    let (n, m) = (32, 16);
    let identity = process_image(&img, n, m, &BackendSpec::Identity, 0, 2).map_err(|e| e.to_string())?.image;
    for (label, backend) in [("gain 1", gain_backend(&["--gain", "1"])), ("cat", BackendSpec::External(ExternalSpec::new(vec!["cat".into()])))] {
        let echo = process_image(&img, n, m, &backend, 0, 2).map_err(|e| format!("{label}: {e}"))?.image;
        ensure!(echo == identity, "{label} echo differs from the identity backend");
    }
    let half = process_image(&img, n, m, &gain_backend(&["--gain", "0.5"]), 0, 2).map_err(|e| e.to_string())?.image;
    let expect = img.map_pixels(|px| px.map(|v| 0.5 * v));
    let err = half.max_abs_diff(&expect).map_err(|e| e.to_string())?;
    ensure!(err <= 1.0 / 255.0 + 1e-12, "gain 0.5 off by {err}");

    let spec = GridSpec::fit(96, 80, n, m).unwrap();
    for (fault, at) in [("garbage", 5), ("resize", 0), ("truncate", 11)] {
        let backend = gain_backend(&["--fault", fault, "--fault-at", &at.to_string()]);
        let failure = process_image(&img, n, m, &backend, 0, 1).err().ok_or(format!("{fault}: no error"))?;
        let want = spec.origin_at(at);
        ensure!(failure.origin() == Some(want), "{fault}: origin {:?}, want {want:?}: {failure}", failure.origin());
        let text = failure.to_string();
        ensure!(text.contains(&want.to_string()), "{fault}: message does not name {want}: {text}");
    }
    Ok(format!("echo identical, gain 0.5 within {:.2}/255, 3 fault kinds name their origin", err * 255.0))
}

fn vmstain_run(config: &Path) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vmstain"))
        .args(["run", "--config"])
        .arg(config)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "vmstain run failed: {}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(config).map_err(|e| e.to_string())?;
    let cfg: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    fs::read(cfg["output"].as_str().unwrap()).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let input = dir.path().join("slide.png");
    vmstain_core::io::save_image(&random_rgb8(&mut rng, 900, 700), &input).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for (i, workers) in [1, 1, 2, 8].into_iter().enumerate() {
        let config = dir.path().join(format!("job{i}.json"));
        let job = serde_json::json!({
            "input": input,
            "output": dir.path().join(format!("out{i}.png")),
            "n": 256,
            "m": 64,
            "backend": {"kind": "contrast_jitter", "gain_min": 0.9, "gain_max": 1.1},
            "metrics": {"seam": true, "hist_corr": true},
            "workers": workers,
            "seed": 1234
        });
        fs::write(&config, job.to_string()).map_err(|e| e.to_string())?;
        outputs.push(vmstain_run(&config)?);
    }
    ensure!(outputs[0] == outputs[1], "two runs with 1 worker differ");
    ensure!(outputs[0] == outputs[2], "workers 1 and 2 differ");
    ensure!(outputs[0] == outputs[3], "workers 1 and 8 differ");
    let input_bytes = fs::read(&input).map_err(|e| e.to_string())?;
    ensure!(outputs[0] != input_bytes, "jitter backend left the slide unchanged");
    Ok(format!("900x700 jitter job: 2 runs and workers 1/2/8 byte-identical ({} bytes)", outputs[0].len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("grid arithmetic", 5, grid_arithmetic),
        ("partition of unity", 30, partition_of_unity),
        ("end-to-end identity", 10, end_to_end_identity),
        ("streaming equals naive blend", 30, streaming_matches_naive),
        ("HSV round trip", 5, hsv_round_trip),
        ("value-loss gradient", 10, value_loss_gradient_check),
        ("loss assembly", 5, loss_assembly),
        ("seam reduction", 60, seam_reduction),
        ("metrics sanity", 5, metrics_sanity),
        ("external-backend protocol", 30, external_protocol),
        ("determinism", 60, determinism),
    ];
    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.into_iter().enumerate() {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = t.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > Duration::from_secs(budget) => {
                Err(format!("{detail}; over the {budget} s budget"))
            }
            other => other,
        };
        let secs = elapsed.as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name} ({secs:.2} s / {budget} s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name} ({secs:.2} s / {budget} s): {why}", i + 1);
            }
        }
    }
    println!("{} of 11 criteria passed", 11 - failed);
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
