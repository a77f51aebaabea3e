//! Fixed-latency FIFO channels in simulation ticks.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A message stamped with the tick it was created on.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestampedMessage<P> {
    pub payload: P,
    pub origin_tick: u64,
    /// Origin tick of the newest feedback frame the sender had seen when it
    /// created this message. `None` when it had seen nothing yet.
    pub feedback_echo_tick: Option<u64>,
}

impl<P> TimestampedMessage<P> {
    pub fn new(payload: P, origin_tick: u64) -> Self {
        TimestampedMessage {
            payload,
            origin_tick,
            feedback_echo_tick: None,
        }
    }

    pub fn with_echo(payload: P, origin_tick: u64, echo: Option<u64>) -> Self {
        debug_assert!(echo.map_or(true, |e| e <= origin_tick));
        TimestampedMessage {
            payload,
            origin_tick,
            feedback_echo_tick: echo,
        }
    }
}

/// Extra random latency per message. Release order never goes backwards, so
/// jitter delays messages without reordering them.
#[derive(Debug, Clone)]
pub struct Jitter {
    pub max_extra_ticks: u64,
    rng: ChaCha8Rng,
}

impl Jitter {
    pub fn new(max_extra_ticks: u64, seed: u64) -> Self {
        Jitter {
            max_extra_ticks,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// One direction of the emulated network.
#[derive(Debug, Clone)]
pub struct DelayChannel<P> {
    queue: VecDeque<(TimestampedMessage<P>, u64)>,
    delay_ticks: u64,
    last_send: Option<u64>,
    last_release: u64,
    jitter: Option<Jitter>,
}

impl<P> DelayChannel<P> {
    pub fn new(delay_ticks: u64) -> Self {
        DelayChannel {
            queue: VecDeque::new(),
            delay_ticks,
            last_send: None,
            last_release: 0,
            jitter: None,
        }
    }

    pub fn with_jitter(mut self, jitter: Jitter) -> Self {
        self.jitter = Some(jitter);
        self
    }

    pub fn delay_ticks(&self) -> u64 {
        self.delay_ticks
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Enqueues `msg`; it becomes deliverable at `now_tick + delay_ticks`.
    pub fn send(&mut self, msg: TimestampedMessage<P>, now_tick: u64) -> Result<()> {
        if let Some(last) = self.last_send {
            if now_tick < last {
                return Err(Error::OutOfOrderSend {
                    now: now_tick,
                    last,
                });
            }
        }
        self.last_send = Some(now_tick);
        let extra = match self.jitter.as_mut() {
            Some(j) if j.max_extra_ticks > 0 => j.rng.gen_range(0..=j.max_extra_ticks),
            _ => 0,
        };
        let release = (now_tick + self.delay_ticks + extra).max(self.last_release);
        self.last_release = release;
        self.queue.push_back((msg, release));
        Ok(())
    }

    /// Removes and returns, in send order, every message due at or before `now_tick`.
    pub fn deliver_due(&mut self, now_tick: u64) -> Vec<TimestampedMessage<P>> {
        let mut out = Vec::new();
        while let Some((_, release)) = self.queue.front() {
            if *release > now_tick {
                break;
            }
            let (msg, _) = self.queue.pop_front().expect("front exists");
            out.push(msg);
        }
        out
    }
}

/// Round-trip delay estimate derived from a command's feedback echo.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundTrip {
    pub ticks: u64,
    /// True when the message carried no echo and the nominal value was used.
    pub nominal: bool,
}

/// Age, in ticks, of the feedback frame the command's sender reacted to.
pub fn estimate_round_trip<P>(
    cmd_msg: &TimestampedMessage<P>,
    now_tick: u64,
    nominal_ticks: u64,
) -> RoundTrip {
    match cmd_msg.feedback_echo_tick {
        Some(echo) => RoundTrip {
            ticks: now_tick.saturating_sub(echo),
            nominal: false,
        },
        None => RoundTrip {
            ticks: nominal_ticks,
            nominal: true,
        },
    }
}

/// Converts milliseconds to whole ticks, rejecting values that are not multiples.
pub fn ms_to_ticks(ms: u64, tick_ms: u64) -> Result<u64> {
    if tick_ms == 0 || ms % tick_ms != 0 {
        return Err(Error::config(format!(
            "delay {ms} ms is not a multiple of the {tick_ms} ms tick"
        )));
    }
    Ok(ms / tick_ms)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_delay_is_identity() {
        let mut ch = DelayChannel::new(0);
        ch.send(TimestampedMessage::new("a", 5), 5).unwrap();
        assert_eq!(ch.deliver_due(5).len(), 1);
    }

    #[test]
    fn tick_arithmetic() {
        let mut ch = DelayChannel::new(ms_to_ticks(400, 50).unwrap());
        ch.send(TimestampedMessage::new(1, 10), 10).unwrap();
        assert!(ch.deliver_due(17).is_empty());
        assert_eq!(ch.deliver_due(18)[0].payload, 1);
    }

    #[test]
    fn fifo_order() {
        let mut ch = DelayChannel::new(3);
        ch.send(TimestampedMessage::new('x', 10), 10).unwrap();
        ch.send(TimestampedMessage::new('y', 11), 11).unwrap();
        let got: Vec<char> = ch.deliver_due(100).into_iter().map(|m| m.payload).collect();
        assert_eq!(got, vec!['x', 'y']);
    }

    #[test]
    fn empty_and_partial_delivery() {
        let mut ch: DelayChannel<u8> = DelayChannel::new(2);
        assert!(ch.deliver_due(0).is_empty());
        ch.send(TimestampedMessage::new(1, 0), 0).unwrap();
        ch.send(TimestampedMessage::new(2, 1), 1).unwrap();
        let got = ch.deliver_due(2);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].payload, 1);
        assert_eq!(ch.len(), 1);
    }

    #[test]
    fn out_of_order_send_is_rejected() {
        let mut ch = DelayChannel::new(1);
        ch.send(TimestampedMessage::new(0, 5), 5).unwrap();
        assert!(matches!(
            ch.send(TimestampedMessage::new(0, 4), 4),
            Err(Error::OutOfOrderSend { now: 4, last: 5 })
        ));
    }

    #[test]
    fn round_trip_estimates() {
        let m = TimestampedMessage::with_echo((), 110, Some(100));
        assert_eq!(
            estimate_round_trip(&m, 116, 8),
            RoundTrip {
                ticks: 16,
                nominal: false
            }
        );
        let m = TimestampedMessage::new((), 3);
        assert_eq!(
            estimate_round_trip(&m, 9, 8),
            RoundTrip {
                ticks: 8,
                nominal: true
            }
        );
    }

    #[test]
    fn jitter_never_reorders() {
        let mut ch = DelayChannel::new(2).with_jitter(Jitter::new(5, 9));
        for t in 0..200u64 {
            ch.send(TimestampedMessage::new(t, t), t).unwrap();
        }
        let got: Vec<u64> = ch.deliver_due(10_000).into_iter().map(|m| m.payload).collect();
        assert_eq!(got, (0..200).collect::<Vec<_>>());
    }

    #[test]
    fn rejects_fractional_tick_delay() {
        assert!(ms_to_ticks(125, 50).is_err());
        assert_eq!(ms_to_ticks(1000, 50).unwrap(), 20);
    }
}
