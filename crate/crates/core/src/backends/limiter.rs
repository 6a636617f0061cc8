use std::sync::{Condvar, Mutex};

#[derive(Debug)]
struct State {
    next_ticket: u64,
    now_serving: u64,
    active: usize,
}

/// Bounds the number of outstanding requests. Waiters are admitted in
/// arrival order.
#[derive(Debug)]
pub struct InFlightLimiter {
    max: usize,
    state: Mutex<State>,
    cv: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a InFlightLimiter,
}

impl InFlightLimiter {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            state: Mutex::new(State {
                next_ticket: 0,
                now_serving: 0,
                active: 0,
            }),
            cv: Condvar::new(),
        }
    }

    pub fn max(&self) -> usize {
        self.max
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let ticket = st.next_ticket;
        st.next_ticket += 1;
        while !(st.now_serving == ticket && st.active < self.max) {
            st = self.cv.wait(st).unwrap_or_else(|e| e.into_inner());
        }
        st.now_serving += 1;
        st.active += 1;
        self.cv.notify_all();
        Permit { limiter: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut st = self.limiter.state.lock().unwrap_or_else(|e| e.into_inner());
        st.active -= 1;
        self.limiter.cv.notify_all();
    }
}
