use crate::error::{Result, StarError};

/// Which interval table set an embedding comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Before,
    After,
}

/// An interval as hours, minutes and seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hms {
    pub hours: usize,
    pub minutes: usize,
    pub seconds: usize,
}

/// Largest representable interval; anything from one day up maps here.
pub const MAX_HMS: Hms = Hms {
    hours: 23,
    minutes: 59,
    seconds: 59,
};

pub fn decompose_interval(seconds: i64) -> Result<Hms> {
    if seconds < 0 {
        return Err(StarError::NegativeInterval(seconds));
    }
    if seconds >= 86_400 {
        return Ok(MAX_HMS);
    }
    let s = seconds as usize;
    Ok(Hms {
        hours: s / 3600,
        minutes: s % 3600 / 60,
        seconds: s % 60,
    })
}
