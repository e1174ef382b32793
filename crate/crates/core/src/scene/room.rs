use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distances below this are clamped when computing 1/d attenuation.
pub const MIN_DISTANCE: f64 = 0.1;

/// AIRs extend this far past the reverberation time.
pub const COVERAGE_FACTOR: f64 = 1.2;

/// A shoebox room with uniform wall absorption.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    /// Meters, x/y/z.
    pub dimensions: [f64; 3],
    /// Seconds. Zero gives an anechoic room (direct path only).
    pub t60: f64,
    #[serde(default = "default_speed_of_sound")]
    pub speed_of_sound: f64,
    /// Upper bound on the total number of wall reflections per image.
    /// `None` includes every image that arrives within the AIR length.
    #[serde(default)]
    pub max_image_order: Option<u32>,
}

fn default_speed_of_sound() -> f64 {
    343.0
}

impl RoomSpec {
    pub fn new(dimensions: [f64; 3], t60: f64) -> Self {
        Self {
            dimensions,
            t60,
            speed_of_sound: default_speed_of_sound(),
            max_image_order: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::config(format!(
                "room dimensions must be positive, got {:?}",
                self.dimensions
            )));
        }
        if !(self.t60 >= 0.0 && self.t60.is_finite()) {
            return Err(Error::config(format!("t60 must be >= 0, got {}", self.t60)));
        }
        if !(self.speed_of_sound > 0.0 && self.speed_of_sound.is_finite()) {
            return Err(Error::config("speed of sound must be positive"));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dimensions.iter().product()
    }

    pub fn surface_area(&self) -> f64 {
        let [x, y, z] = self.dimensions;
        2.0 * (x * y + y * z + x * z)
    }

    /// Uniform pressure reflection coefficient from Eyring's formula,
    /// `T60 = 24 ln(10) V / (-c S ln(1 - alpha))` with `beta = sqrt(1 - alpha)`.
    pub fn reflection_coefficient(&self) -> f64 {
        if self.t60 == 0.0 {
            return 0.0;
        }
        let ln10 = std::f64::consts::LN_10;
        (-12.0 * ln10 * self.volume() / (self.speed_of_sound * self.surface_area() * self.t60)).exp()
    }

    pub fn check_inside(&self, p: [f64; 3]) -> Result<()> {
        let inside = p.iter().zip(self.dimensions.iter()).all(|(&x, &d)| x > 0.0 && x < d);
        if inside {
            Ok(())
        } else {
            Err(Error::OutsideRoom {
                position: p,
                dimensions: self.dimensions,
            })
        }
    }

    /// Number of taps an AIR for this source/mic pair gets.
    pub fn air_length(&self, src: [f64; 3], mic: [f64; 3], sample_rate: u32) -> usize {
        let delay = direct_delay(distance(src, mic), self.speed_of_sound, sample_rate);
        let tail = (COVERAGE_FACTOR * self.t60 * sample_rate as f64).ceil() as usize;
        delay + tail + 1
    }
}

pub fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn direct_delay(dist: f64, c: f64, sample_rate: u32) -> usize {
    (dist / c * sample_rate as f64).round() as usize
}

/// Image-method AIR (Allen & Berkley) with nearest-sample delays and
/// 1/distance attenuation.
pub fn simulate_air(room: &RoomSpec, src: [f64; 3], mic: [f64; 3], sample_rate: u32) -> Result<Vec<f64>> {
    room.validate()?;
    room.check_inside(src)?;
    room.check_inside(mic)?;
    let len = room.air_length(src, mic, sample_rate);
    simulate_air_with_length(room, src, mic, sample_rate, len)
}

/// As [`simulate_air`], with the tap count fixed by the caller.
pub fn simulate_air_with_length(
    room: &RoomSpec,
    src: [f64; 3],
    mic: [f64; 3],
    sample_rate: u32,
    len: usize,
) -> Result<Vec<f64>> {
    room.validate()?;
    room.check_inside(src)?;
    room.check_inside(mic)?;
    let mut air = vec![0.0; len];
    let fs = sample_rate as f64;
    let c = room.speed_of_sound;
    let beta = room.reflection_coefficient();

    if beta == 0.0 {
        let d = distance(src, mic);
        let n = direct_delay(d, c, sample_rate);
        if n < len {
            air[n] = 1.0 / d.max(MIN_DISTANCE);
        }
        return Ok(air);
    }

    let max_dist = len as f64 / fs * c;
    let dims = room.dimensions;
    let reach: [i64; 3] = std::array::from_fn(|a| (max_dist / (2.0 * dims[a])).ceil() as i64 + 1);
    let order_cap = room.max_image_order.map(|o| o as i64);
    if let Some(o) = order_cap {
        let needed = (max_dist / dims.iter().cloned().fold(0.0, f64::max)).floor() as i64;
        if o < needed {
            log::warn!(
                "max_image_order {o} does not cover the {:.2} s AIR (about {needed} reflections needed)",
                len as f64 / fs
            );
        }
    }
    let log_beta = beta.ln();

    for parity in 0..8u8 {
        let p = [
            (parity & 1) as i64,
            ((parity >> 1) & 1) as i64,
            ((parity >> 2) & 1) as i64,
        ];
        let rel: [f64; 3] = std::array::from_fn(|a| (1 - 2 * p[a]) as f64 * src[a] - mic[a]);
        for l in -reach[0]..=reach[0] {
            let dx = rel[0] + 2.0 * l as f64 * dims[0];
            let kx = (l - p[0]).abs() + l.abs();
            for m in -reach[1]..=reach[1] {
                let dy = rel[1] + 2.0 * m as f64 * dims[1];
                let ky = (m - p[1]).abs() + m.abs();
                let dxy2 = dx * dx + dy * dy;
                if dxy2.sqrt() > max_dist {
                    continue;
                }
                for n in -reach[2]..=reach[2] {
                    let dz = rel[2] + 2.0 * n as f64 * dims[2];
                    let k = kx + ky + (n - p[2]).abs() + n.abs();
                    if order_cap.is_some_and(|o| k > o) {
                        continue;
                    }
                    let d = (dxy2 + dz * dz).sqrt();
                    let tap = (d / c * fs).round() as usize;
                    if tap >= len {
                        continue;
                    }
                    air[tap] += (k as f64 * log_beta).exp() / d.max(MIN_DISTANCE);
                }
            }
        }
    }
    Ok(air)
}

/// Splits an AIR into early and late parts at `boundary_ms` after the
/// direct-path peak. Both parts keep the full length; their sum is `air`.
pub fn split_air(air: &[f64], boundary_ms: f64, sample_rate: u32) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(boundary_ms >= 0.0) {
        return Err(Error::config("early boundary must be >= 0 ms"));
    }
    let peak = air
        .iter()
        .enumerate()
        .fold(
            (0, -1.0),
            |(bi, bv), (i, &v)| if v.abs() > bv { (i, v.abs()) } else { (bi, bv) },
        )
        .0;
    let last_early = peak + (boundary_ms * 1e-3 * sample_rate as f64).round() as usize;
    let mut early = vec![0.0; air.len()];
    let mut late = vec![0.0; air.len()];
    for (i, &v) in air.iter().enumerate() {
        if i <= last_early {
            early[i] = v;
        } else {
            late[i] = v;
        }
    }
    Ok((early, late))
}

/// Schroeder backward-integrated energy decay curve in dB (0 dB at tap 0).
pub fn energy_decay_curve(air: &[f64]) -> Vec<f64> {
    let total: f64 = air.iter().map(|x| x * x).sum();
    let mut acc = 0.0;
    let mut edc = vec![0.0; air.len()];
    for i in (0..air.len()).rev() {
        acc += air[i] * air[i];
        edc[i] = 10.0 * (acc / total).log10();
    }
    edc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eyring_coefficient_reproduces_t60() {
        let room = RoomSpec::new([6.0, 5.0, 3.0], 0.4);
        let beta = room.reflection_coefficient();
        let alpha = 1.0 - beta * beta;
        let t60 = 24.0 * std::f64::consts::LN_10 * room.volume() / (-343.0 * room.surface_area() * (1.0 - alpha).ln());
        assert!((t60 - 0.4).abs() < 1e-12);
    }

    #[test]
    fn anechoic_single_tap() {
        let room = RoomSpec::new([5.0, 4.0, 3.0], 0.0);
        let air = simulate_air(&room, [1.0, 1.0, 1.0], [2.715, 1.0, 1.0], 16000).unwrap();
        let nz: Vec<usize> = (0..air.len()).filter(|&i| air[i] != 0.0).collect();
        assert_eq!(nz, vec![80]);
        assert!((air[80] - 1.0 / 1.715).abs() < 1e-12);
    }

    #[test]
    fn colocated_uses_distance_floor() {
        let room = RoomSpec::new([5.0, 4.0, 3.0], 0.0);
        let air = simulate_air(&room, [1.0, 1.0, 1.0], [1.0, 1.0, 1.0], 16000).unwrap();
        assert_eq!(air.len(), 1);
        assert_eq!(air[0], 1.0 / MIN_DISTANCE);
    }

    #[test]
    fn outside_positions_rejected() {
        let room = RoomSpec::new([5.0, 4.0, 3.0], 0.3);
        assert!(matches!(
            simulate_air(&room, [5.5, 1.0, 1.0], [1.0, 1.0, 1.0], 16000),
            Err(Error::OutsideRoom { .. })
        ));
        assert!(simulate_air(&room, [1.0, 1.0, 0.0], [1.0, 1.0, 1.0], 16000).is_err());
    }

    #[test]
    fn order_cap_limits_images() {
        let mut room = RoomSpec::new([5.0, 4.0, 3.0], 0.3);
        room.max_image_order = Some(0);
        let air = simulate_air(&room, [1.0, 1.0, 1.0], [3.0, 2.0, 1.5], 16000).unwrap();
        assert_eq!(air.iter().filter(|&&x| x != 0.0).count(), 1);
        room.max_image_order = Some(1);
        let air = simulate_air(&room, [1.0, 1.0, 1.0], [3.1, 2.2, 1.4], 16000).unwrap();
        let nz: Vec<(usize, f64)> = air.iter().cloned().enumerate().filter(|x| x.1 != 0.0).collect();
        assert_eq!(nz.len(), 7, "{nz:?}");
    }

    #[test]
    fn split_partitions_exactly() {
        let room = RoomSpec::new([6.0, 5.0, 3.0], 0.5);
        let air = simulate_air(&room, [1.5, 2.0, 1.2], [4.0, 3.0, 1.4], 16000).unwrap();
        let (early, late) = split_air(&air, 50.0, 16000).unwrap();
        for i in 0..air.len() {
            assert_eq!(early[i] + late[i], air[i]);
            assert!(early[i] == 0.0 || late[i] == 0.0);
        }
        let (early0, _) = split_air(&air, 0.0, 16000).unwrap();
        let peak = (0..air.len())
            .max_by(|&a, &b| air[a].abs().total_cmp(&air[b].abs()))
            .unwrap();
        assert_eq!(early0.iter().rposition(|&x| x != 0.0), Some(peak));
    }

    #[test]
    fn anechoic_split_has_empty_late_part() {
        let room = RoomSpec::new([5.0, 4.0, 3.0], 0.0);
        let air = simulate_air(&room, [1.0, 1.0, 1.0], [2.0, 2.0, 2.0], 16000).unwrap();
        let (_, late) = split_air(&air, 50.0, 16000).unwrap();
        assert!(late.iter().all(|&x| x == 0.0));
    }
}
