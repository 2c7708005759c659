//! Intraday trading clock for a two-session exchange day.
//!
//! The exchange trades 09:30–11:30 and 13:00–15:00, so a trading day holds
//! exactly 14 400 seconds. This module converts wall-clock timestamps into
//! that intraday trading clock: seconds since the open with the midday break
//! removed, normalized day-times in `[0, 1]`, and the per-second grid index
//! used by the return-regression grid.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

/// Wall-clock second-of-day for 09:30:00.
pub const MORNING_OPEN: u32 = 9 * 3600 + 30 * 60;
/// Wall-clock second-of-day for 11:30:00.
pub const MORNING_CLOSE: u32 = 11 * 3600 + 30 * 60;
/// Wall-clock second-of-day for 13:00:00.
pub const AFTERNOON_OPEN: u32 = 13 * 3600;
/// Wall-clock second-of-day for 15:00:00.
pub const AFTERNOON_CLOSE: u32 = 15 * 3600;

/// Seconds in one trading day (both sessions, break excluded).
pub const DAY_SECONDS: u32 = (MORNING_CLOSE - MORNING_OPEN) + (AFTERNOON_CLOSE - AFTERNOON_OPEN);

/// A trade timestamp: calendar date plus wall-clock second-of-day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EventTime {
    pub date: NaiveDate,
    /// Wall-clock seconds since midnight (e.g. 09:30:15 is 34 215).
    pub second: u32,
}

impl EventTime {
    pub fn new(date: NaiveDate, second: u32) -> Self {
        EventTime { date, second }
    }

    /// Renders the second-of-day as `HH:MM:SS`.
    pub fn time_string(&self) -> String {
        let h = self.second / 3600;
        let m = (self.second % 3600) / 60;
        let s = self.second % 60;
        format!("{h:02}:{m:02}:{s:02}")
    }
}

/// Which half of the trading day a second falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Session {
    Morning,
    Afternoon,
}

/// The two-session intraday clock.
///
/// Session windows are wall-clock second-of-day pairs, both endpoints valid
/// (the 11:30:00 and 15:00:00 closing prints belong to their sessions).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayClock {
    pub morning: (u32, u32),
    pub afternoon: (u32, u32),
}

impl Default for DayClock {
    fn default() -> Self {
        DayClock {
            morning: (MORNING_OPEN, MORNING_CLOSE),
            afternoon: (AFTERNOON_OPEN, AFTERNOON_CLOSE),
        }
    }
}

impl DayClock {
    /// Total trading seconds in one day.
    pub fn day_seconds(&self) -> u32 {
        (self.morning.1 - self.morning.0) + (self.afternoon.1 - self.afternoon.0)
    }

    /// Session containing the wall-clock second, if any.
    pub fn session_of(&self, second: u32) -> Option<Session> {
        if (self.morning.0..=self.morning.1).contains(&second) {
            Some(Session::Morning)
        } else if (self.afternoon.0..=self.afternoon.1).contains(&second) {
            Some(Session::Afternoon)
        } else {
            None
        }
    }

    /// True when the wall-clock second falls inside a trading session.
    pub fn in_session(&self, second: u32) -> bool {
        self.session_of(second).is_some()
    }

    /// Trading-clock seconds since the open, with the midday break removed.
    ///
    /// The morning maps onto `[0, morning_len]` and the afternoon onto
    /// `[morning_len, day_seconds]`; 11:30:00 and 13:00:00 both land on the
    /// morning length (7 200 under default sessions). Returns `None` outside
    /// the sessions.
    pub fn trading_second(&self, second: u32) -> Option<u32> {
        match self.session_of(second)? {
            Session::Morning => Some(second - self.morning.0),
            Session::Afternoon => {
                Some((self.morning.1 - self.morning.0) + (second - self.afternoon.0))
            }
        }
    }

    /// Normalized day-time in `[0, 1]`: 09:30 ↦ 0, 11:30 and 13:00 ↦ 0.5,
    /// 15:00 ↦ 1 under default sessions.
    pub fn normalize(&self, second: u32) -> Option<f64> {
        Some(self.trading_second(second)? as f64 / self.day_seconds() as f64)
    }

    /// Index into a per-day grid with one slot per trading second
    /// (`0..day_seconds`). Unlike [`trading_second`](Self::trading_second),
    /// the session-closing prints are folded into the last slot of their
    /// session so that the first afternoon second keeps a slot of its own.
    pub fn grid_second(&self, second: u32) -> Option<u32> {
        let morning_len = self.morning.1 - self.morning.0;
        let afternoon_len = self.afternoon.1 - self.afternoon.0;
        match self.session_of(second)? {
            Session::Morning => Some((second - self.morning.0).min(morning_len - 1)),
            Session::Afternoon => {
                Some(morning_len + (second - self.afternoon.0).min(afternoon_len - 1))
            }
        }
    }

    /// Wall-clock second for a trading-clock offset in `[0, day_seconds)`.
    ///
    /// Inverse of [`trading_second`](Self::trading_second) on the half-open
    /// day; the ambiguous session-closing prints (11:30:00, 15:00:00) are
    /// never produced. Returns `None` for offsets past the day.
    pub fn wall_second(&self, trading: u32) -> Option<u32> {
        let morning_len = self.morning.1 - self.morning.0;
        if trading < morning_len {
            Some(self.morning.0 + trading)
        } else if trading < self.day_seconds() {
            Some(self.afternoon.0 + (trading - morning_len))
        } else {
            None
        }
    }

    /// Grid index of the first slot of each session, used to zero the
    /// open/break-crossing returns on the second grid.
    pub fn session_starts(&self) -> [u32; 2] {
        [0, self.morning.1 - self.morning.0]
    }

    /// True when two grid indices fall inside the same session, i.e. the
    /// half-open interval between them crosses no break.
    pub fn same_session_grid(&self, a: u32, b: u32) -> bool {
        let split = self.morning.1 - self.morning.0;
        (a < split) == (b < split)
    }
}

/// Sorted set of the distinct calendar dates a dataset trades on.
///
/// Trading-day gaps are measured in positions within this calendar, so a
/// weekend or holiday with no data does not count as elapsed trading days.
#[derive(Debug, Clone, Default)]
pub struct TradingCalendar {
    days: Vec<NaiveDate>,
}

impl TradingCalendar {
    /// Builds the calendar from any iterator of dates (duplicates fine).
    pub fn from_dates<I: IntoIterator<Item = NaiveDate>>(dates: I) -> Self {
        let mut days: Vec<NaiveDate> = dates.into_iter().collect();
        days.sort_unstable();
        days.dedup();
        TradingCalendar { days }
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    /// Position of `date` in the calendar, if it is a trading day.
    pub fn day_index(&self, date: NaiveDate) -> Option<usize> {
        self.days.binary_search(&date).ok()
    }

    /// Trading-day gap between two calendar dates: 0 for the same day, 1 for
    /// consecutive trading days, and so on. `None` if either date is not in
    /// the calendar.
    pub fn gap(&self, from: NaiveDate, to: NaiveDate) -> Option<usize> {
        let a = self.day_index(from)?;
        let b = self.day_index(to)?;
        Some(b.abs_diff(a))
    }
}

/// Trading-clock seconds elapsed between two in-session timestamps, skipping
/// closed hours, the midday break, and non-trading dates.
///
/// Returns `None` if either timestamp is outside the sessions or its date is
/// missing from the calendar.
pub fn elapsed_trading_seconds(
    clock: &DayClock,
    calendar: &TradingCalendar,
    from: EventTime,
    to: EventTime,
) -> Option<f64> {
    let (lo, hi) = if (from.date, from.second) <= (to.date, to.second) {
        (from, to)
    } else {
        (to, from)
    };
    let ts_lo = clock.trading_second(lo.second)? as f64;
    let ts_hi = clock.trading_second(hi.second)? as f64;
    let gap = calendar.gap(lo.date, hi.date)? as f64;
    if gap == 0.0 {
        Some(ts_hi - ts_lo)
    } else {
        let day = clock.day_seconds() as f64;
        Some((day - ts_lo) + day * (gap - 1.0) + ts_hi)
    }
}
