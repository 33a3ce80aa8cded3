//! LoRa preamble simulation with SP4T antenna switching.
//!
//! The transmitter cycles through the four tetrahedron antennas while sending
//! identical up-chirps, dwelling `1.5·T` on each. At the receiver the ratio of
//! two consecutive chirps, `x[n+N] / x[n]`, removes the chirp itself and any
//! constant phase offset. Pairs of samples on the same antenna leave only the
//! CFO rotation `2π·cfo·T`; pairs that straddle a switch add the phase
//! difference between the two antennas. Subtracting the first from the second
//! and accumulating along the switch order yields the three phase shifts
//! relative to the origin antenna.
//!
//! The first dwell starts at the first sample of the frame.

use std::f64::consts::TAU;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rf_geometry::{wrap_phase, PhaseTriple};

pub const N_ANTENNAS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChirpConfig {
    pub sf: u32,
    /// Bandwidth, Hz.
    pub bw: f64,
    /// Sample rate, Hz.
    pub fs: f64,
    pub n_chirps: usize,
}

impl Default for ChirpConfig {
    fn default() -> Self {
        ChirpConfig {
            sf: 9,
            bw: 125_000.0,
            fs: 125_000.0,
            n_chirps: 8,
        }
    }
}

impl ChirpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(7..=12).contains(&self.sf) {
            return Err(Error::Config(format!("spreading factor {} not in [7, 12]", self.sf)));
        }
        if !(self.bw > 0.0 && self.bw.is_finite()) || !(self.fs >= self.bw && self.fs.is_finite()) {
            return Err(Error::Config(format!(
                "need bw > 0 and fs >= bw (bw = {}, fs = {})",
                self.bw, self.fs
            )));
        }
        let n = self.chirp_duration() * self.fs;
        if (n - n.round()).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "chirp duration spans a non-integer number of samples ({n})"
            )));
        }
        if self.n_chirps < 2 {
            return Err(Error::Config("preamble needs at least two chirps".into()));
        }
        Ok(())
    }

    /// Chirp duration `T = 2^sf / bw`, seconds.
    pub fn chirp_duration(&self) -> f64 {
        (1u64 << self.sf) as f64 / self.bw
    }

    pub fn samples_per_chirp(&self) -> usize {
        (self.chirp_duration() * self.fs).round() as usize
    }

    pub fn frame_len(&self) -> usize {
        self.n_chirps * self.samples_per_chirp()
    }

    pub fn frame_duration(&self) -> f64 {
        self.n_chirps as f64 * self.chirp_duration()
    }
}

/// Antenna dwell schedule of the SP4T switch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchSchedule {
    /// Seconds spent on each port.
    pub dwell: f64,
    /// Antenna index (0 = origin, 1..3 = d1..d3) connected at each switch step.
    pub port_order: [usize; N_ANTENNAS],
}

impl SwitchSchedule {
    /// Dwell of 1.5 chirp periods, ports in natural order.
    pub fn standard(cfg: &ChirpConfig) -> Self {
        SwitchSchedule {
            dwell: 1.5 * cfg.chirp_duration(),
            port_order: [0, 1, 2, 3],
        }
    }

    pub fn total_duration(&self) -> f64 {
        self.dwell * N_ANTENNAS as f64
    }

    pub fn validate(&self, cfg: &ChirpConfig) -> Result<()> {
        let t = cfg.chirp_duration();
        if !(self.dwell > t && self.dwell <= 2.0 * t) {
            return Err(Error::Schedule(format!(
                "dwell {} s outside (T, 2T] with T = {t} s",
                self.dwell
            )));
        }
        let mut seen = [false; N_ANTENNAS];
        for &p in &self.port_order {
            if p >= N_ANTENNAS || seen[p] {
                return Err(Error::Schedule(format!(
                    "port order {:?} is not a permutation of 0..4",
                    self.port_order
                )));
            }
            seen[p] = true;
        }
        if self.total_duration() > cfg.frame_duration() * (1.0 + 1e-12) {
            return Err(Error::Schedule(format!(
                "switching takes {} s but the preamble lasts {} s",
                self.total_duration(),
                cfg.frame_duration()
            )));
        }
        Ok(())
    }

    /// First sample index of each switch step.
    fn step_starts(&self, fs: f64) -> [usize; N_ANTENNAS] {
        std::array::from_fn(|s| (s as f64 * self.dwell * fs - 1e-9).ceil().max(0.0) as usize)
    }
}

/// Maps sample indices to switch steps; the last port stays connected after
/// the schedule ends.
struct StepLookup([usize; N_ANTENNAS]);

impl StepLookup {
    fn new(sched: &SwitchSchedule, fs: f64) -> Self {
        StepLookup(sched.step_starts(fs))
    }

    fn step(&self, n: usize) -> usize {
        self.0.iter().rposition(|&start| n >= start).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Impairments {
    /// Carrier frequency offset, Hz.
    pub cfo: f64,
    /// Constant phase offset, radians.
    pub phase0: f64,
    /// Propagation phase per antenna; the origin antenna is the zero reference.
    pub antenna_phases: [f64; N_ANTENNAS],
}

impl Impairments {
    pub fn from_triple(cfo: f64, phase0: f64, p: &PhaseTriple) -> Self {
        Impairments {
            cfo,
            phase0,
            antenna_phases: [0.0, p.phi[0], p.phi[1], p.phi[2]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.antenna_phases[0] != 0.0 {
            return Err(Error::Config(format!(
                "origin antenna phase must be 0, got {}",
                self.antenna_phases[0]
            )));
        }
        if !(self.cfo.is_finite() && self.phase0.is_finite())
            || self.antenna_phases.iter().any(|p| !p.is_finite())
        {
            return Err(Error::Domain("non-finite impairment".into()));
        }
        Ok(())
    }
}

/// Complex baseband samples.
#[derive(Debug, Clone, PartialEq)]
pub struct IqFrame {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
}

impl IqFrame {
    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

/// `n_chirps` identical unit-magnitude up-chirps.
pub fn gen_preamble(cfg: &ChirpConfig) -> Result<IqFrame> {
    cfg.validate()?;
    let n = cfg.samples_per_chirp();
    let t_chirp = cfg.chirp_duration();
    let rate = cfg.bw / t_chirp;
    let chirp: Vec<Complex64> = (0..n)
        .map(|i| {
            let t = i as f64 / cfg.fs;
            Complex64::from_polar(1.0, TAU * (-0.5 * cfg.bw * t + 0.5 * rate * t * t))
        })
        .collect();
    let samples = std::iter::repeat_n(chirp.iter().copied(), cfg.n_chirps)
        .flatten()
        .collect();
    Ok(IqFrame {
        samples,
        sample_rate: cfg.fs,
    })
}

/// Applies CFO, constant phase offset and the per-antenna phase of whichever
/// port is connected at each sample.
pub fn apply_channel(frame: &IqFrame, imp: &Impairments, sched: &SwitchSchedule) -> Result<IqFrame> {
    imp.validate()?;
    if sched.total_duration() > frame.duration() * (1.0 + 1e-12) {
        return Err(Error::Config(format!(
            "switch schedule ({} s) overruns the frame ({} s)",
            sched.total_duration(),
            frame.duration()
        )));
    }
    let fs = frame.sample_rate;
    let lookup = StepLookup::new(sched, fs);
    let samples = frame
        .samples
        .iter()
        .enumerate()
        .map(|(n, x)| {
            let t = n as f64 / fs;
            let antenna = sched.port_order[lookup.step(n)];
            let phase = TAU * imp.cfo * t + imp.phase0 + imp.antenna_phases[antenna];
            x * Complex64::from_polar(1.0, phase)
        })
        .collect();
    Ok(IqFrame {
        samples,
        sample_rate: fs,
    })
}

/// Adds circular complex Gaussian noise at the given per-sample SNR.
pub fn add_awgn(frame: &IqFrame, snr_db: f64, seed: u64) -> IqFrame {
    let power = frame.samples.iter().map(|x| x.norm_sqr()).sum::<f64>()
        / frame.samples.len().max(1) as f64;
    let sigma = (power / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = frame
        .samples
        .iter()
        .map(|x| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            x + Complex64::new(sigma * re, sigma * im)
        })
        .collect();
    IqFrame {
        samples,
        sample_rate: frame.sample_rate,
    }
}

/// Recovers the wrapped phase shifts of antennas 1..3 relative to the origin
/// antenna from consecutive-chirp ratios.
pub fn extract_phase_triple(
    frame: &IqFrame,
    cfg: &ChirpConfig,
    sched: &SwitchSchedule,
) -> Result<PhaseTriple> {
    cfg.validate()?;
    sched.validate(cfg)?;
    if frame.samples.is_empty() || frame.samples.iter().all(|x| x.norm_sqr() == 0.0) {
        return Err(Error::Domain("frame has no signal".into()));
    }
    let n = cfg.samples_per_chirp();
    let pairs = frame.samples.len() / n;
    if pairs < 2 {
        return Err(Error::Schedule("frame shorter than two chirps".into()));
    }

    let lookup = StepLookup::new(sched, frame.sample_rate);
    let mut same = Complex64::new(0.0, 0.0);
    let mut same_count = 0usize;
    let mut crossing = [Complex64::new(0.0, 0.0); N_ANTENNAS - 1];
    let mut crossing_count = [0usize; N_ANTENNAS - 1];

    for a in 0..(pairs - 1) * n {
        let b = a + n;
        let prod = frame.samples[b] * frame.samples[a].conj();
        let mag = prod.norm();
        if mag == 0.0 || !mag.is_finite() {
            continue;
        }
        let unit = prod / mag;
        let (sa, sb) = (lookup.step(a), lookup.step(b));
        if sa == sb {
            same += unit;
            same_count += 1;
        } else if sb == sa + 1 {
            crossing[sa] += unit;
            crossing_count[sa] += 1;
        } else {
            return Err(Error::Schedule(format!(
                "chirp pair spans more than one switch (steps {sa} → {sb})"
            )));
        }
    }
    if same_count == 0 {
        return Err(Error::Schedule("no same-antenna chirp pair for CFO estimation".into()));
    }
    if let Some(s) = crossing_count.iter().position(|&c| c == 0) {
        return Err(Error::Schedule(format!("no chirp pair straddles switch {s} → {}", s + 1)));
    }

    let cfo_rotation = same.arg();
    // phase of each switch step relative to step 0
    let mut cumulative = [0.0; N_ANTENNAS];
    for s in 0..N_ANTENNAS - 1 {
        let step_diff = wrap_phase(crossing[s].arg() - cfo_rotation).0;
        cumulative[s + 1] = cumulative[s] + step_diff;
    }
    let step_of = |antenna: usize| sched.port_order.iter().position(|&p| p == antenna).unwrap();
    let origin = cumulative[step_of(0)];
    let phi = [1, 2, 3].map(|k| wrap_phase(cumulative[step_of(k)] - origin).0);
    PhaseTriple::wrapped(phi)
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".hdr");
    PathBuf::from(name)
}

/// Writes interleaved little-endian f64 I/Q to `path` and a text header to `path.hdr`.
pub fn write_iq(frame: &IqFrame, cfg: &ChirpConfig, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for x in &frame.samples {
        w.write_all(&x.re.to_le_bytes())?;
        w.write_all(&x.im.to_le_bytes())?;
    }
    w.flush()?;
    let header = format!(
        "fs={}\nsf={}\nbw={}\nn_chirps={}\n",
        frame.sample_rate, cfg.sf, cfg.bw, cfg.n_chirps
    );
    fs::write(sidecar_path(path), header)?;
    Ok(())
}

pub fn read_iq(path: &Path) -> Result<(IqFrame, ChirpConfig)> {
    let header = fs::read_to_string(sidecar_path(path))?;
    let mut fields = std::collections::HashMap::new();
    for (i, line) in header.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i as u64 + 1,
            msg: format!("expected key=value, got {line:?}"),
        })?;
        fields.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| -> Result<&String> {
        fields
            .get(k)
            .ok_or_else(|| Error::Format(format!("IQ header missing {k}")))
    };
    let bad = |k: &str| Error::Format(format!("IQ header field {k} is malformed"));
    let cfg = ChirpConfig {
        fs: get("fs")?.parse().map_err(|_| bad("fs"))?,
        sf: get("sf")?.parse().map_err(|_| bad("sf"))?,
        bw: get("bw")?.parse().map_err(|_| bad("bw"))?,
        n_chirps: get("n_chirps")?.parse().map_err(|_| bad("n_chirps"))?,
    };
    let bytes = fs::read(path)?;
    if bytes.len() % 16 != 0 {
        return Err(Error::Format(format!(
            "IQ payload of {} bytes is not a whole number of f64 pairs",
            bytes.len()
        )));
    }
    let samples = bytes
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect();
    Ok((
        IqFrame {
            samples,
            sample_rate: cfg.fs,
        },
        cfg,
    ))
}
