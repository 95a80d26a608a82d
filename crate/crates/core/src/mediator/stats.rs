use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindStats {
    pub total: u64,
    pub delayed: u64,
    pub max_delay_ms: u64,
}

/// Scheduling counters. An event counts as delayed when it was queued rather
/// than handed over on arrival, whether it was later delivered or expired.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelayStats {
    pub total_events: u64,
    pub delayed_events: u64,
    pub expired_events: u64,
    pub rejected_events: u64,
    pub repeat_inputs: u64,
    pub max_delay_ms: u64,
    pub max_input_derived_delay_ms: u64,
    pub total_delay_ms: u64,
    pub inputs: KindStats,
    pub handoffs: KindStats,
    pub requests: KindStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Kind {
    Input,
    Handoff,
    Request,
}

impl DelayStats {
    fn kind_mut(&mut self, kind: Kind) -> &mut KindStats {
        match kind {
            Kind::Input => &mut self.inputs,
            Kind::Handoff => &mut self.handoffs,
            Kind::Request => &mut self.requests,
        }
    }

    pub(crate) fn admitted(&mut self, kind: Kind) {
        self.total_events += 1;
        self.kind_mut(kind).total += 1;
    }

    pub(crate) fn held(&mut self, kind: Kind) {
        self.delayed_events += 1;
        self.kind_mut(kind).delayed += 1;
    }

    pub(crate) fn delivered(&mut self, kind: Kind, delay_ms: u64, input_derived: bool) {
        self.max_delay_ms = self.max_delay_ms.max(delay_ms);
        self.total_delay_ms += delay_ms;
        if input_derived {
            self.max_input_derived_delay_ms = self.max_input_derived_delay_ms.max(delay_ms);
        }
        let k = self.kind_mut(kind);
        k.max_delay_ms = k.max_delay_ms.max(delay_ms);
    }

    pub fn delayed_fraction(&self) -> f64 {
        if self.total_events == 0 {
            0.0
        } else {
            self.delayed_events as f64 / self.total_events as f64
        }
    }
}
