//! Selects the construction seeds for the shipped reconciliation codes.
//!
//! For every rate, a handful of candidate seeds are generated, audited for
//! 4-cycles, and measured with planted-error decode trials at that rate's
//! operating points. The first candidate clearing the bar (preferring the
//! best success rate at its hardest point) is written into `codes/`.
//!
//!     cargo run --release -p qkd --example code_campaign

use qkd::bits::Bits;
use qkd::postproc::decode::MinSumDecoder;
use qkd::postproc::ldpc::{CodeRate, LdpcCode, BLOCK_BITS};
use qkd::rng::{SlotRng, StreamKind};
use qkd::types::RngSeed;
use std::fs;
use std::path::Path;

const TRIALS: usize = 200;
const CANDIDATE_SEEDS: [u64; 12] = [1, 2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31];

fn planted(n: usize, p: f64, rng: &mut SlotRng) -> Bits {
    let mut e = Bits::new();
    for _ in 0..n {
        e.push(rng.chance(p));
    }
    e
}

fn success_rate(code: &LdpcCode, p: f64, trial_seed: u64) -> f64 {
    let decoder = MinSumDecoder::new(code);
    let mut ok = 0usize;
    for t in 0..TRIALS {
        let mut rng = SlotRng::for_index(RngSeed(trial_seed), StreamKind::ErrorInject, t as u64);
        let e = planted(code.n(), p, &mut rng);
        let outcome = decoder.decode(&code.syndrome(&e), p);
        if let qkd::postproc::decode::DecodeOutcome::Corrected { error, .. } = outcome {
            if error == e {
                ok += 1;
            }
        }
    }
    ok as f64 / TRIALS as f64
}

struct Plan {
    rate: CodeRate,
    file: &'static str,
    /// (error rate, minimum acceptable success fraction)
    bars: &'static [(f64, f64)],
    /// (error rate, maximum acceptable success fraction)
    caps: &'static [(f64, f64)],
    /// point whose success rate ranks candidates that clear every bar
    rank_point: f64,
}

fn main() {
    let plans = [
        Plan {
            rate: CodeRate::R50,
            file: "ldpc_4096_r050.txt",
            // 8% sits at this family's finite-length waterfall; discards
            // there cost only throughput, so a moderate rate suffices
            bars: &[(0.057, 0.995), (0.08, 0.50)],
            caps: &[(0.12, 0.005)],
            rank_point: 0.08,
        },
        Plan {
            rate: CodeRate::R65,
            file: "ldpc_4096_r065.txt",
            // 5.1% is past this rate's waterfall; the controller falls back
            // to the 0.50 code after one discard there, so the success rate
            // at that point only ranks candidates
            bars: &[(0.03, 0.995), (0.051, 0.0)],
            caps: &[],
            rank_point: 0.051,
        },
        Plan {
            rate: CodeRate::R75,
            file: "ldpc_4096_r075.txt",
            // the 60-iteration min-sum waterfall for this family centers
            // near 2.75%, so candidates are ranked by their 3% success and
            // gated where the curve is still steep and reliable
            bars: &[(0.022, 0.95), (0.03, 0.0)],
            caps: &[(0.15, 0.02)],
            rank_point: 0.03,
        },
        Plan {
            rate: CodeRate::R90,
            file: "ldpc_4096_r090.txt",
            // only 410 checks at this rate, so the waterfall sits very low;
            // the controller picks this code below roughly 1% estimated QBER
            // and falls back one rate on a discard, so shipping quality is
            // judged deep in the reliable region
            bars: &[(0.002, 0.95), (0.006, 0.0)],
            caps: &[(0.15, 0.02)],
            rank_point: 0.006,
        },
    ];

    let out_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("codes");
    for plan in &plans {
        println!("rate {:.2}:", plan.rate.label());
        let mut best: Option<(u64, f64, LdpcCode)> = None;
        for &seed in &CANDIDATE_SEEDS {
            let code = LdpcCode::generate(BLOCK_BITS, plan.rate.label(), seed).unwrap();
            if code.has_four_cycle() {
                println!("  seed {:>2}: rejected, girth below 6", seed);
                continue;
            }
            let mut ok = true;
            let mut rank = 0.0;
            let mut report = String::new();
            for &(p, min) in plan.bars {
                let s = success_rate(&code, p, seed.wrapping_mul(1000) + (p * 1e4) as u64);
                report.push_str(&format!("  {:.1}%: {:>5.1}%", p * 100.0, s * 100.0));
                if s < min {
                    ok = false;
                }
                if (p - plan.rank_point).abs() < 1e-12 {
                    rank = s;
                }
            }
            for &(p, max) in plan.caps {
                let s = success_rate(&code, p, seed.wrapping_mul(1000) + (p * 1e4) as u64);
                report.push_str(&format!("  {:.1}%: {:>5.1}%", p * 100.0, s * 100.0));
                if s > max {
                    ok = false;
                }
            }
            println!("  seed {:>2}:{}  {}", seed, report, if ok { "ok" } else { "below bar" });
            if ok && best.as_ref().is_none_or(|(_, r, _)| rank > *r) {
                best = Some((seed, rank, code));
            }
        }
        match best {
            Some((seed, rank, code)) => {
                let path = out_dir.join(plan.file);
                fs::write(&path, code.to_file_string()).expect("write code file");
                println!(
                    "  -> pinned seed {} ({:.1}% at the ranking point), wrote {}",
                    seed,
                    rank * 100.0,
                    path.display()
                );
            }
            None => {
                println!("  -> NO candidate cleared the bar; adjust the plan before shipping");
                std::process::exit(1);
            }
        }
    }
}
