//! First-order stable lags `p / (s + λ)` discretized exactly under a
//! zero-order hold, and banks of them used to extend a scalar signal into
//! `q` filtered channels.

use crate::error::{Error, Result};

/// One channel `η̇ = −λη + p·u`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterChannel {
    gain: f64,
    pole: f64,
    dt: f64,
    state: f64,
    // cached e^{−λ dt} and (p/λ)(1 − e^{−λ dt})
    decay: f64,
    input_weight: f64,
}

impl FilterChannel {
    pub fn new(gain: f64, pole: f64, dt: f64) -> Result<Self> {
        if !(pole > 0.0) || !pole.is_finite() {
            return Err(Error::Config(format!(
                "filter pole must be positive, got {pole}"
            )));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Config(format!(
                "filter dt must be positive, got {dt}"
            )));
        }
        if !gain.is_finite() {
            return Err(Error::Config(format!(
                "filter gain must be finite, got {gain}"
            )));
        }
        let decay = (-pole * dt).exp();
        let input_weight = gain / pole * -(-pole * dt).exp_m1();
        Ok(Self {
            gain,
            pole,
            dt,
            state: 0.0,
            decay,
            input_weight,
        })
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn pole(&self) -> f64 {
        self.pole
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn state(&self) -> f64 {
        self.state
    }

    pub fn set_state(&mut self, state: f64) {
        self.state = state;
    }

    pub fn reset(&mut self) {
        self.state = 0.0;
    }

    /// Advances one sample with `input` held over the interval and returns the new state.
    pub fn step(&mut self, input: f64) -> Result<f64> {
        if !input.is_finite() {
            return Err(Error::Signal(format!("non-finite filter input {input}")));
        }
        self.state = self.decay * self.state + self.input_weight * input;
        Ok(self.state)
    }
}

/// `q` channels driven by the same scalar input.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    channels: Vec<FilterChannel>,
}

impl FilterBank {
    /// Builds a zero-initialized bank. Poles must be positive and pairwise distinct.
    pub fn new(q: usize, poles: &[f64], gains: &[f64], dt: f64) -> Result<Self> {
        if q == 0 {
            return Err(Error::Config(
                "filter bank needs at least one channel".into(),
            ));
        }
        if poles.len() != q || gains.len() != q {
            return Err(Error::Config(format!(
                "filter bank of size {q} got {} poles and {} gains",
                poles.len(),
                gains.len()
            )));
        }
        for (i, a) in poles.iter().enumerate() {
            if poles[..i].iter().any(|b| b == a) {
                return Err(Error::Config(format!("duplicate filter pole {a}")));
            }
        }
        let channels = poles
            .iter()
            .zip(gains)
            .map(|(&pole, &gain)| FilterChannel::new(gain, pole, dt))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { channels })
    }

    /// Unit gains and poles `1, 2, …, q`.
    pub fn with_default_poles(q: usize, dt: f64) -> Result<Self> {
        let poles: Vec<f64> = (1..=q).map(|i| i as f64).collect();
        Self::new(q, &poles, &vec![1.0; q], dt)
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn channels(&self) -> &[FilterChannel] {
        &self.channels
    }

    pub fn states(&self) -> Vec<f64> {
        self.channels.iter().map(FilterChannel::state).collect()
    }

    pub fn reset(&mut self) {
        self.channels.iter_mut().for_each(FilterChannel::reset);
    }

    /// Steps every channel with `input`; returns `(ℋ₁(u), …, ℋ_q(u))`.
    pub fn apply(&mut self, input: f64) -> Result<Vec<f64>> {
        if !input.is_finite() {
            return Err(Error::Signal(format!("non-finite filter input {input}")));
        }
        self.channels.iter_mut().map(|c| c.step(input)).collect()
    }

    /// Same as [`apply`](Self::apply) but writes into `out`.
    pub fn apply_into(&mut self, input: f64, out: &mut [f64]) -> Result<()> {
        if !input.is_finite() {
            return Err(Error::Signal(format!("non-finite filter input {input}")));
        }
        for (c, o) in self.channels.iter_mut().zip(out.iter_mut()) {
            *o = c.step(input)?;
        }
        Ok(())
    }
}
