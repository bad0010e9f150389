//! One-off measurement of the rate-0.75 decode waterfall: success vs error
//! rate, column-degree profile, and iteration budget. Informs the campaign
//! plan; not part of the shipped pipeline.

use qkd::bits::Bits;
use qkd::postproc::decode::MinSumDecoder;
use qkd::postproc::ldpc::LdpcCode;
use qkd::rng::{SlotRng, StreamKind};
use qkd::types::RngSeed;

fn planted(n: usize, p: f64, rng: &mut SlotRng) -> Bits {
    let mut e = Bits::new();
    for _ in 0..n {
        e.push(rng.chance(p));
    }
    e
}

fn measure(code: &LdpcCode, p: f64, trials: usize, tseed: u64) -> f64 {
    let decoder = MinSumDecoder::new(code);
    let mut ok = 0usize;
    for t in 0..trials {
        let mut rng = SlotRng::for_index(RngSeed(tseed), StreamKind::ErrorInject, t as u64);
        let e = planted(code.n(), p, &mut rng);
        if let qkd::postproc::decode::DecodeOutcome::Corrected { error, .. } =
            decoder.decode(&code.syndrome(&e), p)
        {
            if error == e {
                ok += 1;
            }
        }
    }
    ok as f64 / trials as f64
}

fn main() {
    let code3 = LdpcCode::generate(4096, 0.75, 1).unwrap();
    println!("pure degree-3 (3,12), p sweep, 200 trials:");
    for p in [0.020, 0.022, 0.024, 0.026, 0.028, 0.030, 0.032] {
        println!("  p={:.3}: {:5.1}%", p, measure(&code3, p, 200, 900 + (p * 1e4) as u64) * 100.0);
    }
}
