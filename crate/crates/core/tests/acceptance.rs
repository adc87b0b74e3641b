//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smem_core::cli::{memory_traces, suite_sequences};
use smem_core::embedding::Embedding;
use smem_core::formats::{
    config_to_text, decode_mask, encode_mask, parse_config, EmbeddingFile, SequenceManifest,
};
use smem_core::mask::ObjectMask;
use smem_core::memory::{MemoryBank, MemoryEntry, PayloadHandle};
use smem_core::metrics::{
    boundary_f, iou, quality, tally_track, vots_bundle, MetricOptions, SequenceMasks,
};
use smem_core::pipeline::{ablate, run_loaded, Cadence, PipelineConfig};
use smem_core::synth::SUITE_NAMES;

type Outcome = Result<String, String>;

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("eviction oracle equivalence", eviction_oracle),
        ("memory scaling on constant-1000", memory_scaling),
        ("constant-memory limit", constant_memory),
        ("fusion net-positivity on shift-200", fusion_net_positive),
        ("ablation ordering", ablation_ordering),
        ("metric correctness", metric_correctness),
        ("format robustness", format_robustness),
        ("run determinism", run_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} ({secs:.2} s)"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} ({secs:.2} s)");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn within(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let spent = start.elapsed();
    if spent > limit {
        return Err(format!("{what} took {spent:?}, limit {limit:?}"));
    }
    Ok(())
}

fn emb(v: Vec<f64>) -> Embedding {
    Embedding::new(v).unwrap()
}

// ---- eviction -------------------------------------------------------------

fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Exhaustive argmax of `rel * (1 + lambda / age)` over unprotected entries,
/// preferring the smallest frame among scores equal up to 1e-12 relative.
fn oracle_evict(entries: &[(usize, Vec<f64>, bool)], current: &[f64], frame: usize, lambda: f64) -> Option<usize> {
    let scores: Vec<Option<f64>> = entries
        .iter()
        .map(|(f, k, protected)| {
            (!protected).then(|| oracle_cosine(k, current) * (1.0 + lambda / (frame - f) as f64))
        })
        .collect();
    let max = scores.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    (0..entries.len())
        .filter(|&i| scores[i].is_some_and(|s| max - s <= 1e-12 * max.abs().max(1.0)))
        .min_by_key(|&i| entries[i].0)
}

fn eviction_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut ties = 0;
    for case in 0..1000 {
        let dim = rng.gen_range(1..=16);
        let len = rng.gen_range(0..=8);
        let lambda = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..3.0) };
        let palette: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut frame = 0;
        let mut raw = Vec::new();
        for _ in 0..len {
            frame += rng.gen_range(1..4);
            let key: Vec<f64> = if rng.gen_bool(0.4) {
                palette[rng.gen_range(0..3)].clone()
            } else if rng.gen_bool(0.05) {
                vec![0.0; dim]
            } else {
                (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
            };
            raw.push((frame, key, rng.gen_bool(0.15)));
        }
        let current_frame = frame + rng.gen_range(1..4);
        let current: Vec<f64> = if rng.gen_bool(0.3) {
            palette[0].clone()
        } else {
            (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        let entries = raw
            .iter()
            .map(|(f, k, p)| MemoryEntry {
                frame_index: *f,
                key: emb(k.clone()),
                payload: PayloadHandle(*f as u64),
                protected: *p,
            })
            .collect();
        let bank = MemoryBank::from_entries(lambda, 0.85, None, entries).map_err(|e| e.to_string())?;
        let got = bank
            .evict_candidate(&emb(current.clone()), current_frame)
            .map_err(|e| e.to_string())?
            .map(|c| c.index);
        let want = oracle_evict(&raw, &current, current_frame, lambda);
        if got != want {
            return Err(format!("case {case}: implementation chose {got:?}, oracle {want:?}"));
        }
        let scored: Vec<f64> = raw
            .iter()
            .filter(|e| !e.2)
            .map(|(f, k, _)| oracle_cosine(k, &current) * (1.0 + lambda / (current_frame - f) as f64))
            .collect();
        if scored.iter().enumerate().any(|(i, s)| scored[..i].iter().any(|o| (o - s).abs() <= 1e-12)) {
            ties += 1;
        }
    }
    within(start, Duration::from_secs(5), "1000 banks")?;
    Ok(format!("1000/1000 banks match, {ties} with tied scores"))
}

// ---- memory ---------------------------------------------------------------

fn memory_scaling() -> Outcome {
    let start = Instant::now();
    let cfg = PipelineConfig::default();
    let (smem, base) = memory_traces("constant-1000", &cfg).map_err(|e| e.to_string())?;
    let len = base.len();
    for (t, &size) in base.iter().enumerate() {
        let expected = 1 + (1..=t).filter(|&s| cfg.cadence.inserts_at(s, len)).count();
        if size != expected {
            return Err(format!("baseline |M_{t}| = {size}, expected {expected}"));
        }
    }
    if let Some(t) = (0..len).find(|&t| smem[t] > base[t]) {
        return Err(format!("smem exceeds baseline at frame {t}"));
    }
    let (s, b) = (*smem.last().unwrap(), *base.last().unwrap());
    if (s as f64) > 0.5 * b as f64 {
        return Err(format!("final sizes smem {s}, baseline {b}"));
    }
    within(start, Duration::from_secs(30), "paired run")?;
    Ok(format!("final |M| smem {s} vs baseline {b} (ratio {:.4}), baseline exactly linear", s as f64 / b as f64))
}

fn constant_memory() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for tau in [-1.0, 0.0, 0.5, 0.85, 0.999, 1.0] {
        for _ in 0..20 {
            let dim = rng.gen_range(1..=16);
            let key = emb((0..dim).map(|_| rng.gen_range(-10.0..10.0)).collect());
            let mut bank = MemoryBank::new(1.0, tau, None).map_err(|e| e.to_string())?;
            bank.insert_protected(0, key.clone(), PayloadHandle(0)).map_err(|e| e.to_string())?;
            for t in 1..=300 {
                bank.update(key.clone(), t, PayloadHandle(t as u64)).map_err(|e| e.to_string())?;
                if bank.len() != 2 {
                    return Err(format!("tau {tau}, dim {dim}: size {} after frame {t}", bank.len()));
                }
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} streams of 300 identical keys stay at size 2"))
}

// ---- fusion ---------------------------------------------------------------

fn fusion_net_positive() -> Outcome {
    let seqs = suite_sequences(&["shift-200"], 0..5, Default::default()).map_err(|e| e.to_string())?;
    let (mut frames, mut accepted, mut rejected) = (0, 0, 0);
    // stricter thresholds make the rejection path occur too
    for tau_fuse in [0.8, 0.99, 0.999, 0.9999] {
        let cfg = PipelineConfig {
            tau_fuse,
            ..Default::default()
        };
        for seq in &seqs {
            let gt = seq.gt_all.as_ref().unwrap();
            let r = run_loaded(seq, &cfg).map_err(|e| e.to_string())?;
            if !r.fusion_fallbacks.is_empty() {
                return Err(format!("{} refinement fallbacks", r.fusion_fallbacks.len()));
            }
            for (t, gt_t) in gt.iter().enumerate().skip(1) {
                for (o, gt_o) in gt_t.iter().enumerate() {
                    let fused = iou(&r.masks[t][o], gt_o).unwrap();
                    let vos = iou(&r.vos_masks[t][o], gt_o).unwrap();
                    if fused < vos {
                        return Err(format!("tau_fuse {tau_fuse}, frame {t}: fused IoU {fused} < VOS IoU {vos}"));
                    }
                    if r.accepted[t][o] {
                        accepted += 1;
                    } else {
                        rejected += 1;
                        if r.masks[t][o].bits() != r.vos_masks[t][o].bits() {
                            return Err(format!("tau_fuse {tau_fuse}, frame {t}: rejected fusion altered the mask"));
                        }
                    }
                    frames += 1;
                }
            }
        }
    }
    if rejected == 0 {
        return Err("no rejected frames, fail-safe path untested".into());
    }
    Ok(format!(
        "{frames}/{frames} frames net-positive over 5 seeds x 4 thresholds ({accepted} accepted, {rejected} rejected and bit-identical)"
    ))
}

fn ablation_ordering() -> Outcome {
    let start = Instant::now();
    let seqs = suite_sequences(&SUITE_NAMES, 0..5, Default::default()).map_err(|e| e.to_string())?;
    let rows = ablate(&seqs, &PipelineConfig::default(), &MetricOptions::default()).map_err(|e| e.to_string())?;
    let q: Vec<f64> = rows.iter().map(|r| r.bundle.q).collect();
    let listing = rows
        .iter()
        .map(|r| format!("{} {:.4}", r.name, r.bundle.q))
        .collect::<Vec<_>>()
        .join(" <= ");
    if !q.windows(2).all(|w| w[0] <= w[1]) {
        return Err(format!("ordering violated: {listing}"));
    }
    if q[3] - q[0] < 0.01 {
        return Err(format!("full - base = {:.4} < 0.01", q[3] - q[0]));
    }
    within(start, Duration::from_secs(300), "ablation")?;
    Ok(format!("{listing}; full - base = {:.4}", q[3] - q[0]))
}

// ---- metrics --------------------------------------------------------------

fn block(h: usize, w: usize, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> ObjectMask {
    ObjectMask::from_fn(h, w, |r, c| rows.contains(&r) && cols.contains(&c)).unwrap()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ObjectMask {
    let density = rng.gen_range(0.0..1.0);
    ObjectMask::from_fn(h, w, |_, _| rng.gen_bool(density)).unwrap()
}

fn naive_iou(a: &ObjectMask, b: &ObjectMask) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for r in 0..a.height() {
        for c in 0..a.width() {
            let (x, y) = (a.get(r, c), b.get(r, c));
            inter += usize::from(x && y);
            union += usize::from(x || y);
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

fn naive_boundary(m: &ObjectMask) -> Vec<(i64, i64)> {
    let (h, w) = (m.height() as i64, m.width() as i64);
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if !m.get(r as usize, c as usize) {
                continue;
            }
            let edge = [(r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)]
                .iter()
                .any(|&(rr, cc)| rr < 0 || cc < 0 || rr >= h || cc >= w || !m.get(rr as usize, cc as usize));
            if edge {
                out.push((r, c));
            }
        }
    }
    out
}

fn naive_f(a: &ObjectMask, b: &ObjectMask, tol: f64) -> f64 {
    let (pa, pb) = (naive_boundary(a), naive_boundary(b));
    if pa.is_empty() && pb.is_empty() {
        return 1.0;
    }
    if pa.is_empty() || pb.is_empty() {
        return 0.0;
    }
    let hit = |p: &(i64, i64), q: &[(i64, i64)]| {
        q.iter().any(|o| (((p.0 - o.0).pow(2) + (p.1 - o.1).pow(2)) as f64).sqrt() <= tol)
    };
    let precision = pa.iter().filter(|p| hit(p, &pb)).count() as f64 / pa.len() as f64;
    let recall = pb.iter().filter(|p| hit(p, &pa)).count() as f64 / pb.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn metric_correctness() -> Outcome {
    // hand fixtures
    let l = block(2, 4, 0..2, 0..3);
    let r = block(2, 4, 0..2, 1..4);
    if iou(&l, &r).unwrap() != 0.5 {
        return Err("shifted 2x3 blocks should have IoU 0.5".into());
    }
    let q = quality(&[vec![vec![l.clone()], vec![r.clone()]]], &[vec![vec![l.clone()], vec![l.clone()]]]).unwrap();
    if !close(q, 0.75) {
        return Err(format!("Q of IoUs {{1, 0.5}} = {q}"));
    }
    let e = ObjectMask::empty(2, 4).unwrap();
    let q = quality(&[vec![vec![l.clone()]], vec![vec![e.clone()]]], &[vec![vec![l.clone()]], vec![vec![l.clone()]]])
        .unwrap();
    if !close(q, 0.5) {
        return Err(format!("Q of sequences {{1, 0}} = {q}"));
    }
    let gt_track = [l.clone(), l.clone(), l.clone(), e.clone()];
    let pred_track = [l.clone(), block(2, 4, 0..2, 3..4), e.clone(), e.clone()];
    let seq = |t: &[ObjectMask]| -> SequenceMasks { t.iter().map(|m| vec![m.clone()]).collect() };
    let b = vots_bundle(&[seq(&pred_track)], &[seq(&gt_track)], &MetricOptions::default()).unwrap();
    let want = [(b.rob, 1.0 / 3.0), (b.dre, 1.0 / 3.0), (b.nre, 1.0 / 3.0), (b.adq, 1.0), (b.acc, 1.0)];
    if !want.iter().all(|&(g, w)| close(g, w)) {
        return Err(format!("four-frame fixture gave {b:?}"));
    }
    let sq = block(20, 20, 5..15, 5..15);
    let shifted = block(20, 20, 5..15, 6..16);
    if !close(boundary_f(&sq, &shifted, 1.5).unwrap(), 1.0) {
        return Err("1 px shift at tolerance 1.5 should score F = 1".into());
    }

    // brute-force oracles
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..10_000 {
        let (h, w) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let (a, b) = (random_mask(&mut rng, h, w), random_mask(&mut rng, h, w));
        if iou(&a, &b).unwrap() != naive_iou(&a, &b) {
            return Err(format!("IoU pair {i} differs from the triple-loop count"));
        }
    }
    for i in 0..1000 {
        let (h, w) = (rng.gen_range(1..=12), rng.gen_range(1..=12));
        let (a, b) = (random_mask(&mut rng, h, w), random_mask(&mut rng, h, w));
        let tol = rng.gen_range(0.5..3.0);
        let (got, want) = (boundary_f(&a, &b, tol).unwrap(), naive_f(&a, &b, tol));
        if !close(got, want) {
            return Err(format!("boundary F pair {i}: {got} vs brute force {want}"));
        }
    }

    // frame-class partition
    let mut partitions = 0;
    for _ in 0..2000 {
        let frames = rng.gen_range(1..20);
        let (h, w) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let gt: Vec<ObjectMask> = (0..frames).map(|_| random_mask(&mut rng, h, w)).collect();
        let pred: Vec<ObjectMask> = (0..frames).map(|_| random_mask(&mut rng, h, w)).collect();
        let opts = MetricOptions {
            track_threshold: rng.gen_range(0.0..0.9),
            ..Default::default()
        };
        let tally = tally_track(&pred.iter().collect::<Vec<_>>(), &gt.iter().collect::<Vec<_>>(), &opts).unwrap();
        if tally.visible == 0 {
            continue;
        }
        let sum = tally.rob() + tally.dre() + tally.nre();
        if !close(sum, 1.0) {
            return Err(format!("Rob + DRE + NRE = {sum}"));
        }
        partitions += 1;
    }
    Ok(format!(
        "hand fixtures exact to 1e-9; 10000 IoU pairs and 1000 boundary-F pairs match brute force; {partitions} partitions sum to 1"
    ))
}

// ---- formats --------------------------------------------------------------

fn random_frame(rng: &mut ChaCha8Rng) -> (usize, usize, Vec<(u32, ObjectMask)>) {
    let (h, w) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
    let n = rng.gen_range(0..4);
    let owner: Vec<usize> = (0..h * w).map(|_| rng.gen_range(0..=n)).collect();
    let mut ids: Vec<u32> = Vec::new();
    while ids.len() < n {
        let id = rng.gen_range(0..300);
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    let objects = ids
        .iter()
        .enumerate()
        .map(|(k, &id)| {
            let bits = owner.iter().map(|&o| o == k + 1).collect();
            (id, ObjectMask::from_bits(h, w, bits).unwrap())
        })
        .collect();
    (h, w, objects)
}

fn encode_frame(h: usize, w: usize, objects: &[(u32, ObjectMask)]) -> String {
    let refs: Vec<(u32, &ObjectMask)> = objects.iter().map(|(i, m)| (*i, m)).collect();
    encode_mask(h, w, &refs).unwrap()
}

fn random_table(rng: &mut ChaCha8Rng) -> EmbeddingFile {
    let dim = rng.gen_range(1..=6);
    let count = rng.gen_range(0..5);
    let meta: String = (0..rng.gen_range(0..12)).map(|_| rng.gen_range('a'..='z')).collect();
    let values = (0..dim * count).map(|_| rng.gen_range(-1e3f32..1e3)).collect();
    EmbeddingFile::new(meta, dim, values).unwrap()
}

fn random_manifest(rng: &mut ChaCha8Rng) -> SequenceManifest {
    let frames = rng.gen_range(1..6);
    let objects = rng.gen_range(1..3);
    let mut m = SequenceManifest {
        sequence: format!("seq{}", rng.gen_range(0..100)),
        frames,
        height: rng.gen_range(1..100),
        width: rng.gen_range(1..100),
        objects,
        keys: rng.gen_bool(0.7).then(|| "keys.smem".to_string()),
        features: rng.gen_bool(0.3).then(|| "f.smem".to_string()),
        scene: rng.gen_bool(0.3).then(|| "shift-200".to_string()),
        scene_seed: rng.gen_bool(0.3).then(|| rng.gen()),
        ..Default::default()
    };
    for t in 0..frames {
        if rng.gen_bool(0.8) {
            m.gt.insert(t, format!("gt/{t:05}.smrl"));
        }
        if rng.gen_bool(0.5) {
            m.vos.insert(t, format!("vos/{t:05}.smrl"));
        }
        if rng.gen_bool(0.3) {
            let o = rng.gen_range(0..objects);
            m.proposals.insert((t, o, rng.gen_range(1..=3)), format!("p/{t}.{o}.smrl"));
        }
    }
    m
}

fn random_config(rng: &mut ChaCha8Rng) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        lambda: rng.gen_range(0.0..4.0),
        tau_mem: rng.gen_range(-1.0..=1.0),
        tau_fuse: rng.gen_range(-1.0..=1.0),
        cadence: if rng.gen_bool(0.5) {
            Cadence::EveryK(rng.gen_range(1..50))
        } else {
            Cadence::FractionOfLength(rng.gen_range(1..50))
        },
        enable_smem: rng.gen(),
        enable_hqtf: rng.gen(),
        capacity_limit: rng.gen_bool(0.5).then(|| rng.gen_range(1..100)),
        seed: rng.gen_range(0..1u64 << 62),
        ..Default::default()
    };
    cfg.synthetic.base_noise = rng.gen_range(0.0..0.5);
    cfg
}

fn mutate(rng: &mut ChaCha8Rng, bytes: &[u8], alphabet: &[u8]) -> Vec<u8> {
    let mut out = bytes.to_vec();
    for _ in 0..rng.gen_range(1..=3) {
        match rng.gen_range(0..6) {
            0 if !out.is_empty() => {
                let i = rng.gen_range(0..out.len());
                out[i] ^= 1 << rng.gen_range(0..8);
            }
            1 if !out.is_empty() => {
                let i = rng.gen_range(0..out.len());
                out[i] = alphabet[rng.gen_range(0..alphabet.len())];
            }
            2 if !out.is_empty() => {
                let i = rng.gen_range(0..out.len());
                out.remove(i);
            }
            3 => {
                let i = rng.gen_range(0..=out.len());
                out.insert(i, alphabet[rng.gen_range(0..alphabet.len())]);
            }
            4 => out.truncate(rng.gen_range(0..=out.len())),
            _ => {
                let i = rng.gen_range(0..=out.len());
                let extra: Vec<u8> = (0..rng.gen_range(1..6)).map(|_| rng.gen()).collect();
                out.splice(i..i, extra);
            }
        }
    }
    out
}

fn format_robustness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for i in 0..10_000 {
        let (h, w, objects) = random_frame(&mut rng);
        let text = encode_frame(h, w, &objects);
        let back = decode_mask(text.as_bytes()).map_err(|e| format!("mask {i}: {e}"))?;
        if back.objects != objects || encode_frame(back.height, back.width, &back.objects) != text {
            return Err(format!("mask {i} did not round-trip"));
        }
        let table = random_table(&mut rng);
        let bytes = table.encode();
        let back = EmbeddingFile::decode(&bytes).map_err(|e| format!("table {i}: {e}"))?;
        if back != table || back.encode() != bytes {
            return Err(format!("embedding table {i} did not round-trip"));
        }
        let m = random_manifest(&mut rng);
        let text = m.to_text();
        let back = SequenceManifest::parse(&text).map_err(|e| format!("manifest {i}: {e}"))?;
        if back != m || back.to_text() != text {
            return Err(format!("manifest {i} did not round-trip"));
        }
        let cfg = random_config(&mut rng);
        let text = config_to_text(&cfg).map_err(|e| e.to_string())?;
        let back = parse_config(&text).map_err(|e| format!("config {i}: {e}"))?;
        if back != cfg || config_to_text(&back).unwrap() != text {
            return Err(format!("config {i} did not round-trip"));
        }
    }

    let text_alphabet = b"0123456789 :\nobjSMRL-=.#abcxyz\t";
    let mut counts = BTreeMap::new();
    let mut accepted = 0usize;
    for _ in 0..100_000 {
        let (h, w, objects) = random_frame(&mut rng);
        let seed = encode_frame(h, w, &objects).into_bytes();
        let input = mutate(&mut rng, &seed, text_alphabet);
        if let Ok(frame) = decode_mask(&input) {
            accepted += 1;
            if encode_frame(frame.height, frame.width, &frame.objects).as_bytes() != input.as_slice() {
                return Err(format!("mask decoder accepted non-canonical input {:?}", String::from_utf8_lossy(&input)));
            }
        }
    }
    counts.insert("smrl", 100_000);
    for _ in 0..100_000 {
        let seed = random_table(&mut rng).encode();
        let all: Vec<u8> = (0..=255).collect();
        let input = mutate(&mut rng, &seed, &all);
        if let Ok(table) = EmbeddingFile::decode(&input) {
            accepted += 1;
            if table.encode() != input {
                return Err("embedding decoder accepted bytes that do not re-encode identically".into());
            }
        }
    }
    counts.insert("smem", 100_000);
    for _ in 0..25_000 {
        let seed = random_manifest(&mut rng).to_text().into_bytes();
        let input = mutate(&mut rng, &seed, b"=.# \ngtvosproposal0123456789abc");
        if let Ok(text) = std::str::from_utf8(&input) {
            if let Ok(m) = SequenceManifest::parse(text) {
                accepted += 1;
                if SequenceManifest::parse(&m.to_text()).ok().as_ref() != Some(&m) {
                    return Err(format!("manifest accepted as {m:?} does not round-trip"));
                }
            }
        }
    }
    counts.insert("manifest", 25_000);
    for _ in 0..25_000 {
        let seed = config_to_text(&random_config(&mut rng)).unwrap().into_bytes();
        let input = mutate(&mut rng, &seed, b"=.# \n\"[]0123456789truefalsevery:");
        if let Ok(text) = std::str::from_utf8(&input) {
            if let Ok(cfg) = parse_config(text) {
                accepted += 1;
                if parse_config(&config_to_text(&cfg).unwrap()).ok().as_ref() != Some(&cfg) {
                    return Err("config accepted but does not round-trip".into());
                }
            }
        }
    }
    counts.insert("config", 25_000);
    let total: usize = counts.values().sum();
    Ok(format!(
        "40000 instances round-trip byte-exactly; {total} mutated inputs ({counts:?}) never crashed, {accepted} accepted all re-encode canonically"
    ))
}

// ---- determinism ----------------------------------------------------------

fn smem(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_smem"))
        .args(args)
        .env_remove("SMEM_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("smem {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

fn run_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let base = tmp.path();
    let p = |s: &str| base.join(s).to_string_lossy().into_owned();
    smem(&["synth", "--suite", "shift-200", "--out", &p("data"), "--seed", "4"])?;
    let manifest = p("data/shift-200/manifest.txt");
    std::fs::write(base.join("cfg.toml"), "cadence = \"every:5\"\nseed = 9\n").map_err(|e| e.to_string())?;
    for out in ["a", "b"] {
        smem(&["run", "--manifest", &manifest, "--config", &p("cfg.toml"), "--out", &p(out)])?;
    }
    let (a, b) = (tree(&base.join("a")), tree(&base.join("b")));
    if a.is_empty() || a != b {
        return Err("output trees differ".into());
    }
    Ok(format!("two runs wrote {} byte-identical files", a.len()))
}
