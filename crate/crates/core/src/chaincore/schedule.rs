//! Coinbase reward and name-registration fee schedules.

use super::amount::{Amount, COIN};

pub const INITIAL_REWARD: u64 = 50 * COIN;
pub const HALVING_INTERVAL: u64 = 210_000;

pub const INITIAL_NETWORK_FEE: u64 = 50 * COIN;
/// Two months of ten-minute blocks.
pub const FEE_EPOCH: u64 = 8_640;

/// Burned by every `NameNew` on top of the network fee: 0.01 coin.
pub const REGISTRATION_BURN: Amount = Amount::from_base_units(COIN / 100);

fn halve(initial: u64, halvings: u64) -> Amount {
    if halvings >= 64 {
        Amount::ZERO
    } else {
        Amount::from_base_units(initial >> halvings)
    }
}

/// Mining reward at `height`: 50 coins, halved every 210 000 blocks.
pub fn block_reward(height: u64) -> Amount {
    halve(INITIAL_REWARD, height / HALVING_INTERVAL)
}

/// Network fee burned by a registration at `height`: 50 coins, halved once per
/// two-month epoch.
pub fn network_fee(height: u64) -> Amount {
    halve(INITIAL_NETWORK_FEE, height / FEE_EPOCH)
}

/// Total burn for a `NameNew` included at `height`.
pub fn registration_cost(height: u64) -> Amount {
    network_fee(height)
        .checked_add(REGISTRATION_BURN)
        .expect("bounded constants")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reward_values() {
        assert_eq!(block_reward(0), Amount::from_coins(50));
        assert_eq!(block_reward(209_999), Amount::from_coins(50));
        assert_eq!(block_reward(210_000), Amount::from_coins(25));
        assert_eq!(block_reward(210_000 * 64), Amount::ZERO);
        assert_eq!(block_reward(u64::MAX), Amount::ZERO);
    }

    #[test]
    fn network_fee_values() {
        assert_eq!(network_fee(0), Amount::from_coins(50));
        assert_eq!(network_fee(8_639), Amount::from_coins(50));
        assert_eq!(network_fee(8_640), Amount::from_coins(25));
        let year = network_fee(6 * FEE_EPOCH);
        assert_eq!(year, Amount::from_base_units(78_125_000));
        assert!(year < Amount::from_coins(1));
    }

    proptest! {
        #[test]
        fn reward_non_increasing(a in any::<u64>(), b in any::<u64>()) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(block_reward(hi) <= block_reward(lo));
        }

        #[test]
        fn reward_halves_exactly(k in 0u64..40) {
            let before = block_reward(k * HALVING_INTERVAL);
            let after = block_reward((k + 1) * HALVING_INTERVAL);
            prop_assert_eq!(after.base_units(), before.base_units() / 2);
            prop_assert_eq!(block_reward((k + 1) * HALVING_INTERVAL - 1), before);
        }

        #[test]
        fn fee_constant_in_first_epoch(h in 0u64..FEE_EPOCH) {
            prop_assert_eq!(network_fee(h), Amount::from_coins(50));
        }
    }
}
