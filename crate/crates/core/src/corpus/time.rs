use crate::error::{Error, Result};

pub const SECONDS_PER_BIN: i64 = 1800;
pub const BINS_PER_DAY: usize = 48;
const SECONDS_PER_DAY: i64 = 86_400;

/// Half-hour slot of the day, `0..48`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TimeBin(u8);

impl TimeBin {
    pub fn new(bin: usize) -> Result<Self> {
        if bin >= BINS_PER_DAY {
            return Err(Error::InvalidArgument(format!("time bin {bin} outside [0, 48)")));
        }
        Ok(TimeBin(bin as u8))
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn hour(self) -> usize {
        self.index() / 2
    }
}

/// Fixed UTC offset used to map timestamps onto local days and time bins.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct TimeZone {
    pub offset_secs: i32,
}

impl TimeZone {
    pub const UTC: TimeZone = TimeZone { offset_secs: 0 };

    pub fn new(offset_secs: i32) -> Result<Self> {
        if offset_secs.abs() > 14 * 3600 {
            return Err(Error::invalid("timezone offset", format!("{offset_secs}s exceeds ±14h")));
        }
        Ok(TimeZone { offset_secs })
    }

    fn local(self, timestamp: i64) -> i64 {
        timestamp + i64::from(self.offset_secs)
    }

    pub fn seconds_of_day(self, timestamp: i64) -> i64 {
        self.local(timestamp).rem_euclid(SECONDS_PER_DAY)
    }

    /// Local day number counted from the epoch.
    pub fn day(self, timestamp: i64) -> i64 {
        self.local(timestamp).div_euclid(SECONDS_PER_DAY)
    }

    pub fn bin(self, timestamp: i64) -> TimeBin {
        TimeBin((self.seconds_of_day(timestamp) / SECONDS_PER_BIN) as u8)
    }

    pub fn hour(self, timestamp: i64) -> usize {
        (self.seconds_of_day(timestamp) / 3600) as usize
    }
}

/// Half-hour bin of a UTC timestamp.
pub fn half_hour_bin(timestamp: i64) -> TimeBin {
    TimeZone::UTC.bin(timestamp)
}
