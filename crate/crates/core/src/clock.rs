//! Integer-nanosecond time base and rate dividers for the lockstep loops.

/// Monotonic time in nanoseconds.
pub type Nanos = u64;

pub const NANOS_PER_SEC: Nanos = 1_000_000_000;
pub const NANOS_PER_MS: Nanos = 1_000_000;

pub fn secs_to_nanos(s: f64) -> Nanos {
    libm::round(s * NANOS_PER_SEC as f64) as Nanos
}

pub fn nanos_to_secs(t: Nanos) -> f64 {
    t as f64 / NANOS_PER_SEC as f64
}

/// Fixed-period tick counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VirtualClock {
    tick: u64,
    period: Nanos,
}

impl VirtualClock {
    pub fn new(rate_hz: u32) -> Self {
        assert!(rate_hz > 0, "clock rate must be positive");
        VirtualClock {
            tick: 0,
            period: NANOS_PER_SEC / rate_hz as Nanos,
        }
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn period(&self) -> Nanos {
        self.period
    }

    pub fn now(&self) -> Nanos {
        self.tick * self.period
    }

    pub fn advance(&mut self) {
        self.tick += 1;
    }

    /// Divider for a slower rate running off this clock, e.g. 50 Hz on 1 kHz.
    pub fn divider(&self, rate_hz: u32) -> RateDivider {
        RateDivider::new(NANOS_PER_SEC / self.period, rate_hz as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateDivider {
    every: u64,
}

impl RateDivider {
    /// Fires on every `base_hz / rate_hz`-th tick, starting at tick 0.
    pub fn new(base_hz: u64, rate_hz: u64) -> Self {
        assert!(rate_hz > 0 && rate_hz <= base_hz, "rate must be in (0, base]");
        RateDivider {
            every: base_hz / rate_hz,
        }
    }

    pub fn every(&self) -> u64 {
        self.every
    }

    pub fn fires(&self, tick: u64) -> bool {
        tick % self.every == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifty_hz_on_kilohertz_is_every_twentieth_tick() {
        let clock = VirtualClock::new(1000);
        let d = clock.divider(50);
        assert_eq!(d.every(), 20);
        assert_eq!((0..1000).filter(|t| d.fires(*t)).count(), 50);
    }

    #[test]
    fn seconds_round_trip() {
        assert_eq!(secs_to_nanos(0.2), 200 * NANOS_PER_MS);
        assert_eq!(nanos_to_secs(1_500_000_000), 1.5);
    }
}
