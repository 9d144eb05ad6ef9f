//! Calendar arithmetic on the proleptic Gregorian calendar.

/// A calendar month (month is 1..=12).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub struct MonthStamp {
    pub year: i32,
    pub month: u32,
}

impl MonthStamp {
    pub fn new(year: i32, month: u32) -> Self {
        assert!((1..=12).contains(&month), "month {month} out of range");
        Self { year, month }
    }

    pub fn next(self) -> Self {
        if self.month == 12 {
            Self {
                year: self.year + 1,
                month: 1,
            }
        } else {
            Self {
                year: self.year,
                month: self.month + 1,
            }
        }
    }

    /// The n-th month after this one.
    pub fn plus(self, n: usize) -> Self {
        let total = self.year as i64 * 12 + (self.month as i64 - 1) + n as i64;
        Self {
            year: total.div_euclid(12) as i32,
            month: (total.rem_euclid(12) + 1) as u32,
        }
    }

    pub fn days_in_month(self) -> u32 {
        match self.month {
            1 | 3 | 5 | 7 | 8 | 10 | 12 => 31,
            4 | 6 | 9 | 11 => 30,
            2 => {
                if is_leap_year(self.year) {
                    29
                } else {
                    28
                }
            }
            _ => unreachable!(),
        }
    }
}

impl std::fmt::Display for MonthStamp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{:02}", self.year, self.month)
    }
}

pub fn is_leap_year(year: i32) -> bool {
    (year % 4 == 0 && year % 100 != 0) || year % 400 == 0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn month_lengths_and_leap_days() {
        assert_eq!(MonthStamp::new(2000, 2).days_in_month(), 29); // divisible by 400
        assert_eq!(MonthStamp::new(1900, 2).days_in_month(), 28); // divisible by 100
        assert_eq!(MonthStamp::new(2024, 2).days_in_month(), 29);
        assert_eq!(MonthStamp::new(2023, 2).days_in_month(), 28);
        assert_eq!(MonthStamp::new(2023, 4).days_in_month(), 30);
    }

    #[test]
    fn plus_wraps_years() {
        let m = MonthStamp::new(1999, 11);
        assert_eq!(m.plus(0), m);
        assert_eq!(m.plus(1), MonthStamp::new(1999, 12));
        assert_eq!(m.plus(2), MonthStamp::new(2000, 1));
        assert_eq!(m.plus(26), MonthStamp::new(2002, 1));
    }
}
