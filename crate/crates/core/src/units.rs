//! dB / dBm conversions.

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Returns `-inf` for zero.
pub fn linear_to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    linear_to_db(w) + 30.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_points() {
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-15);
        assert!((dbm_to_watts(-96.0) - 2.511_886_431_509_58e-13).abs() < 1e-25);
        assert!((db_to_linear(-90.0) - 1e-9).abs() < 1e-24);
        assert_eq!(linear_to_db(0.0), f64::NEG_INFINITY);
    }

    proptest! {
        #[test]
        fn db_round_trip(db in -200.0f64..100.0) {
            prop_assert!((linear_to_db(db_to_linear(db)) - db).abs() < 1e-9);
            prop_assert!((watts_to_dbm(dbm_to_watts(db)) - db).abs() < 1e-9);
        }
    }
}
