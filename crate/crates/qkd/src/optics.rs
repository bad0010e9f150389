//! Monte Carlo model of the fiber link and Bob's two single-photon detectors.
//!
//! A pulse train is simulated slot by slot. Each slot draws, from its own
//! counter-keyed stream: whether at least one signal photon survives source
//! attenuation, channel loss and detector efficiency; which detector the
//! surviving signal hits (set by basis agreement and interferometer
//! visibility); and independent dark counts on both detectors. Double clicks
//! are reported as [`Click::Both`] and squashed to a random detector later,
//! at detection-record time. Detector dead time suppresses whole slots after
//! any click.

use crate::rng::{SlotRng, StreamKind};
use crate::types::{Detector, PhaseChoice, RngSeed, SlotId};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OpticsError {
    #[error("channel loss must be >= 0 dB, got {0}")]
    NegativeLoss(f64),
    #[error("invalid link parameter {name}: {value}")]
    BadParameter { name: &'static str, value: f64 },
    #[error("choice arrays differ in length: alice {alice}, bob {bob}")]
    ChoiceLengthMismatch { alice: usize, bob: usize },
}

/// Physical parameters of one link direction.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkParams {
    /// Mean photon number per attenuated pulse leaving Alice.
    pub mean_photon_number: f64,
    /// One-way channel attenuation in dB.
    pub channel_loss_db: f64,
    /// Detector quantum efficiency, per detector.
    pub detector_efficiency: f64,
    /// Dark-count probability per detector per slot.
    pub dark_count_prob: f64,
    /// Interference visibility of the receiver.
    pub visibility: f64,
    /// Slots blanked after any click.
    pub dead_time_slots: u32,
    /// Pulse repetition rate in Hz.
    pub pulse_rate_hz: f64,
}

impl LinkParams {
    /// Short laboratory fiber: 4.8 dB of loss. Visibility is calibrated so
    /// the expected error rate of the sifted key is 2.6%.
    pub fn lab() -> LinkParams {
        LinkParams {
            mean_photon_number: 0.35,
            channel_loss_db: 4.8,
            detector_efficiency: 0.1,
            dark_count_prob: 2e-5,
            visibility: 0.9513,
            dead_time_slots: 0,
            pulse_rate_hz: 1e7,
        }
    }

    /// Metropolitan line, 11.7 dB of loss, run at the low source intensity.
    /// One visibility calibration covers both intensities; expected error
    /// rates come out near 5.7% here and 5.0% for [`LinkParams::bank35`].
    pub fn bank18() -> LinkParams {
        LinkParams { mean_photon_number: 0.18, ..LinkParams::bank35() }
    }

    /// Metropolitan line at the high source intensity.
    pub fn bank35() -> LinkParams {
        LinkParams {
            mean_photon_number: 0.35,
            channel_loss_db: 11.7,
            detector_efficiency: 0.1,
            dark_count_prob: 2e-5,
            visibility: 0.9151,
            dead_time_slots: 0,
            pulse_rate_hz: 1e7,
        }
    }

    pub fn validate(&self) -> Result<(), OpticsError> {
        if self.channel_loss_db < 0.0 || self.channel_loss_db.is_nan() {
            return Err(OpticsError::NegativeLoss(self.channel_loss_db));
        }
        let checks: [(&'static str, f64, f64, f64); 5] = [
            ("mean_photon_number", self.mean_photon_number, 0.0, 100.0),
            ("detector_efficiency", self.detector_efficiency, 0.0, 1.0),
            ("dark_count_prob", self.dark_count_prob, 0.0, 1.0),
            ("visibility", self.visibility, 0.0, 1.0),
            ("pulse_rate_hz", self.pulse_rate_hz, 1e-9, f64::INFINITY),
        ];
        for (name, value, lo, hi) in checks {
            if !(lo..=hi).contains(&value) {
                return Err(OpticsError::BadParameter { name, value });
            }
        }
        Ok(())
    }
}

/// Fraction of power surviving `loss_db` of attenuation.
pub fn transmittance(loss_db: f64) -> Result<f64, OpticsError> {
    if loss_db < 0.0 || loss_db.is_nan() {
        return Err(OpticsError::NegativeLoss(loss_db));
    }
    Ok(10f64.powf(-loss_db / 10.0))
}

/// Per-slot event probabilities derived from the physical parameters.
/// Precomputed once per train; `simulate_slot` builds one on the fly.
#[derive(Debug, Clone, Copy)]
pub struct ClickModel {
    /// P(at least one signal photon is detected), Poissonian source.
    pub p_signal: f64,
    /// P(at least one of the two detectors dark-fires).
    pub p_dark: f64,
    /// P(any click) = p_signal + p_dark - p_signal * p_dark.
    pub p_click: f64,
    /// P(signal lands on the bit-correct detector | matched bases).
    p_correct: f64,
    dark_each: f64,
}

impl ClickModel {
    pub fn new(params: &LinkParams) -> Result<ClickModel, OpticsError> {
        params.validate()?;
        let t = transmittance(params.channel_loss_db)?;
        let p_signal =
            1.0 - (-params.mean_photon_number * t * params.detector_efficiency).exp();
        let d = params.dark_count_prob;
        let p_dark = 1.0 - (1.0 - d) * (1.0 - d);
        Ok(ClickModel {
            p_signal,
            p_dark,
            p_click: p_signal + p_dark - p_signal * p_dark,
            p_correct: (1.0 + params.visibility) / 2.0,
            dark_each: d,
        })
    }
}

/// Probability that a slot produces any click.
pub fn click_probability(params: &LinkParams) -> Result<f64, OpticsError> {
    Ok(ClickModel::new(params)?.p_click)
}

/// Exact matched-basis error fraction conditioned on a click, including dark
/// coincidences and the uniform resolution of double clicks. Used to
/// calibrate visibilities and as the oracle for the Monte Carlo tests.
pub fn expected_conditional_qber(params: &LinkParams) -> Result<f64, OpticsError> {
    let m = ClickModel::new(params)?;
    let s = m.p_signal;
    let d = m.dark_each;
    let wrong = (1.0 - params.visibility) / 2.0;
    let right = (1.0 + params.visibility) / 2.0;
    // signal on the correct detector, dark count opposite -> coin flip
    let err = s * right * (d / 2.0)
        // signal on the wrong detector; a dark count opposite rescues half
        + s * wrong * (1.0 - d / 2.0)
        // no signal: dark-only clicks are uninformative
        + (1.0 - s) * d * (1.0 - d / 2.0);
    Ok(err / m.p_click)
}

/// What the detector pair reported for one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Click {
    /// No detection.
    None,
    /// Only detector 0 fired.
    D0,
    /// Only detector 1 fired.
    D1,
    /// Both fired; squashed to a random detector before sifting.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectionOutcome {
    pub slot: SlotId,
    pub click: Click,
}

fn slot_click(
    alice: PhaseChoice,
    bob: PhaseChoice,
    model: &ClickModel,
    seed: RngSeed,
    slot: SlotId,
) -> Click {
    let mut rng = SlotRng::for_slot(seed, StreamKind::Optics, slot.train_index, slot.pulse_index);
    // fixed draw order: signal survival, detector routing, dark 0, dark 1
    let survives = rng.chance(model.p_signal);
    let u_route = rng.next_f64();
    let dark0 = rng.chance(model.dark_each);
    let dark1 = rng.chance(model.dark_each);

    let signal_detector = if !survives {
        None
    } else if alice.basis == bob.basis {
        // constructive port follows Alice's bit; visibility sets the leakage
        let correct = if alice.bit { Detector::D1 } else { Detector::D0 };
        Some(if u_route < model.p_correct { correct } else { correct.other() })
    } else {
        // mismatched bases interfere halfway: uniform routing
        Some(if u_route < 0.5 { Detector::D0 } else { Detector::D1 })
    };

    let fired0 = dark0 || signal_detector == Some(Detector::D0);
    let fired1 = dark1 || signal_detector == Some(Detector::D1);
    match (fired0, fired1) {
        (false, false) => Click::None,
        (true, false) => Click::D0,
        (false, true) => Click::D1,
        (true, true) => Click::Both,
    }
}

/// Detection outcome of a single slot. Pure in `(seed, slot)`: recomputing
/// any slot gives the same answer regardless of simulation order.
pub fn simulate_slot(
    alice: PhaseChoice,
    bob: PhaseChoice,
    params: &LinkParams,
    seed: RngSeed,
    slot: SlotId,
) -> Result<DetectionOutcome, OpticsError> {
    let model = ClickModel::new(params)?;
    Ok(DetectionOutcome { slot, click: slot_click(alice, bob, &model, seed, slot) })
}

/// Simulates one train of pulses and applies detector dead time: after any
/// reported click the following `dead_time_slots` slots are blanked. Only
/// slots that actually clicked are returned, in slot order.
pub fn run_train(
    alice_choices: &[PhaseChoice],
    bob_choices: &[PhaseChoice],
    params: &LinkParams,
    seed: RngSeed,
    train_index: u32,
) -> Result<Vec<DetectionOutcome>, OpticsError> {
    if alice_choices.len() != bob_choices.len() {
        return Err(OpticsError::ChoiceLengthMismatch {
            alice: alice_choices.len(),
            bob: bob_choices.len(),
        });
    }
    let model = ClickModel::new(params)?;
    let mut out = Vec::new();
    let mut dead = 0u32;
    for (pulse, (&a, &b)) in alice_choices.iter().zip(bob_choices).enumerate() {
        let slot = SlotId::new(train_index, pulse as u32);
        if dead > 0 {
            dead -= 1;
            continue;
        }
        let click = slot_click(a, b, &model, seed, slot);
        if click != Click::None {
            out.push(DetectionOutcome { slot, click });
            dead = params.dead_time_slots;
        }
    }
    Ok(out)
}
