//! Execution contexts and interleaving control.
//!
//! Every stream of every rank runs on its own OS thread. In `Free` mode the
//! threads race on real hardware. In `Random` and `RoundRobin` modes a baton
//! is passed between threads at every primitive call and every spin
//! iteration, so exactly one context runs at a time and the interleaving is a
//! pure function of the seed.

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SyncFault};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SchedulerMode {
    /// Real threads, real races.
    #[default]
    Free,
    /// One context at a time; the next context is drawn from a seeded RNG.
    Random { seed: u64 },
    /// One context at a time; strict round-robin over live contexts.
    RoundRobin,
}

impl SchedulerMode {
    pub fn is_serialized(&self) -> bool {
        !matches!(self, SchedulerMode::Free)
    }
}

struct BatonState {
    current: usize,
    alive: Vec<bool>,
    rng: Option<ChaCha8Rng>,
}

pub(crate) struct Baton {
    state: Mutex<BatonState>,
    turns: Vec<Condvar>,
}

impl Baton {
    pub(crate) fn new(contexts: usize, mode: SchedulerMode) -> Option<Arc<Baton>> {
        let rng = match mode {
            SchedulerMode::Free => return None,
            SchedulerMode::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            SchedulerMode::RoundRobin => None,
        };
        Some(Arc::new(Baton {
            state: Mutex::new(BatonState {
                current: 0,
                alive: vec![true; contexts],
                rng,
            }),
            turns: (0..contexts).map(|_| Condvar::new()).collect(),
        }))
    }

    fn pick_next(st: &mut BatonState, from: usize) -> Option<usize> {
        let n = st.alive.len();
        if let Some(rng) = st.rng.as_mut() {
            let live = st.alive.iter().filter(|a| **a).count();
            if live == 0 {
                return None;
            }
            let mut k = rng.gen_range(0..live);
            for (i, a) in st.alive.iter().enumerate() {
                if *a {
                    if k == 0 {
                        return Some(i);
                    }
                    k -= 1;
                }
            }
            unreachable!()
        } else {
            (1..=n).map(|d| (from + d) % n).find(|&i| st.alive[i])
        }
    }

    pub(crate) fn acquire(&self, id: usize) {
        let mut st = self.state.lock();
        while st.current != id {
            self.turns[id].wait(&mut st);
        }
    }

    pub(crate) fn pass(&self, id: usize) {
        let mut st = self.state.lock();
        if let Some(next) = Self::pick_next(&mut st, id) {
            st.current = next;
            if next != id {
                self.turns[next].notify_one();
                while st.current != id {
                    self.turns[id].wait(&mut st);
                }
            }
        }
    }

    pub(crate) fn finish(&self, id: usize) {
        let mut st = self.state.lock();
        st.alive[id] = false;
        if let Some(next) = Self::pick_next(&mut st, id) {
            st.current = next;
            self.turns[next].notify_one();
        }
    }
}

pub(crate) struct ExecCtx {
    pub(crate) id: usize,
    pub(crate) rank: usize,
    pub(crate) baton: Option<Arc<Baton>>,
    pub(crate) clock: std::cell::Cell<f64>,
}

thread_local! {
    static CURRENT: RefCell<Option<Rc<ExecCtx>>> = const { RefCell::new(None) };
}

/// Binds the calling thread to a scheduled context until the guard drops.
pub(crate) struct CtxGuard;

impl CtxGuard {
    pub(crate) fn enter(ctx: ExecCtx) -> CtxGuard {
        if let Some(b) = &ctx.baton {
            b.acquire(ctx.id);
        }
        CURRENT.with(|c| *c.borrow_mut() = Some(Rc::new(ctx)));
        CtxGuard
    }
}

impl Drop for CtxGuard {
    fn drop(&mut self) {
        let ctx = CURRENT.with(|c| c.borrow_mut().take());
        if let Some(ctx) = ctx {
            if let Some(b) = &ctx.baton {
                b.finish(ctx.id);
            }
        }
    }
}

fn with_ctx<R>(f: impl FnOnce(Option<&ExecCtx>) -> R) -> R {
    CURRENT.with(|c| f(c.borrow().as_deref()))
}

/// Hands the baton to another context when running under a serialized scheduler.
pub fn yield_point() {
    let baton = with_ctx(|c| c.and_then(|c| c.baton.clone().map(|b| (b, c.id))));
    if let Some((b, id)) = baton {
        b.pass(id);
    }
}

pub(crate) fn serialized() -> bool {
    with_ctx(|c| c.is_some_and(|c| c.baton.is_some()))
}

/// Rank the calling thread runs for, if it is a runtime context.
pub fn current_rank() -> Option<usize> {
    with_ctx(|c| c.map(|c| c.rank))
}

/// Virtual time of the calling context in microseconds (0 outside the runtime).
pub fn clock() -> f64 {
    with_ctx(|c| c.map_or(0.0, |c| c.clock.get()))
}

pub(crate) fn advance_to(t: f64) {
    with_ctx(|c| {
        if let Some(c) = c {
            if t > c.clock.get() {
                c.clock.set(t);
            }
        }
    })
}

pub(crate) fn advance_by(dt: f64) {
    with_ctx(|c| {
        if let Some(c) = c {
            c.clock.set(c.clock.get() + dt);
        }
    })
}

/// Bounded-backoff spin with deadline and cancellation.
pub(crate) struct Spinner<'a> {
    iter: u64,
    start: Instant,
    timeout: Duration,
    cancel: &'a AtomicBool,
    rank: usize,
}

impl<'a> Spinner<'a> {
    pub(crate) fn new(timeout: Duration, cancel: &'a AtomicBool, rank: usize) -> Self {
        Spinner {
            iter: 0,
            start: Instant::now(),
            timeout,
            cancel,
            rank,
        }
    }

    pub(crate) fn spin(&mut self, what: impl FnOnce() -> String) -> Result<()> {
        self.iter += 1;
        if self.cancel.load(Ordering::Relaxed) {
            return Err(SyncFault::Cancelled {
                rank: self.rank,
                what: what(),
            }
            .into());
        }
        if self.iter.is_multiple_of(64) && self.start.elapsed() > self.timeout {
            return Err(SyncFault::Timeout {
                rank: self.rank,
                what: what(),
                waited: self.start.elapsed(),
            }
            .into());
        }
        if serialized() {
            yield_point();
        } else if self.iter < 64 {
            std::hint::spin_loop();
        } else if self.iter < 20_000 {
            std::thread::yield_now();
        } else {
            std::thread::sleep(Duration::from_micros(50));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_order(mode: SchedulerMode) -> Vec<usize> {
        let n = 4;
        let baton = Baton::new(n, mode);
        let log = Arc::new(Mutex::new(Vec::new()));
        std::thread::scope(|s| {
            for id in 0..n {
                let baton = baton.clone();
                let log = log.clone();
                s.spawn(move || {
                    let _g = CtxGuard::enter(ExecCtx {
                        id,
                        rank: id,
                        baton,
                        clock: Default::default(),
                    });
                    for _ in 0..5 {
                        log.lock().push(id);
                        yield_point();
                    }
                });
            }
        });
        let v = log.lock().clone();
        v
    }

    #[test]
    fn round_robin_is_strict() {
        let order = run_order(SchedulerMode::RoundRobin);
        assert_eq!(&order[..8], &[0, 1, 2, 3, 0, 1, 2, 3]);
    }

    #[test]
    fn random_mode_is_reproducible() {
        let a = run_order(SchedulerMode::Random { seed: 9 });
        let b = run_order(SchedulerMode::Random { seed: 9 });
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
    }
}
