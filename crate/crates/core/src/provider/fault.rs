use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use crate::seed::keyed_hash;

use super::{Capability, Provider, ProviderError, ProviderRequest, ProviderResponse};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultKind {
    Transport,
    Timeout,
    Malformed,
    /// Stalls for the given duration, or until the request's timeout if that is shorter.
    Delay(Duration),
}

/// Which calls fail and how.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultPlan {
    /// Fraction of matching calls that fail, decided per call from its seed and trace id.
    pub rate: f64,
    /// Capabilities the plan applies to; empty means all.
    pub capabilities: BTreeSet<Capability>,
    pub kind: FaultKind,
}

impl FaultPlan {
    pub fn always(kind: FaultKind) -> Self {
        Self { rate: 1.0, capabilities: BTreeSet::new(), kind }
    }

    fn applies(&self, request: &ProviderRequest) -> bool {
        if !self.capabilities.is_empty() && !self.capabilities.contains(&request.capability()) {
            return false;
        }
        if self.rate >= 1.0 {
            return true;
        }
        let key = format!("{}:{}", request.capability(), request.trace_id);
        (keyed_hash(request.seed, &key) as f64 / u64::MAX as f64) < self.rate
    }
}

/// Wraps another provider (or none) and fails selected calls.
#[derive(Clone)]
pub struct FaultInjectingProvider {
    inner: Option<Arc<dyn Provider>>,
    plan: FaultPlan,
}

impl FaultInjectingProvider {
    pub fn new(inner: Option<Arc<dyn Provider>>, plan: FaultPlan) -> Self {
        Self { inner, plan }
    }

    /// Every call fails with a transport error.
    pub fn always_failing() -> Self {
        Self::new(None, FaultPlan::always(FaultKind::Transport))
    }
}

impl Provider for FaultInjectingProvider {
    fn call(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        if self.plan.applies(request) {
            return Err(match self.plan.kind {
                FaultKind::Transport => ProviderError::Transport("injected fault".into()),
                FaultKind::Timeout => ProviderError::Timeout(request.timeout),
                FaultKind::Malformed => ProviderError::MalformedOutput("injected fault".into()),
                FaultKind::Delay(delay) => {
                    std::thread::sleep(delay.min(request.timeout));
                    if delay < request.timeout {
                        return self.forward(request);
                    }
                    ProviderError::Timeout(request.timeout)
                }
            });
        }
        self.forward(request)
    }

    fn name(&self) -> &str {
        "fault-injecting"
    }
}

impl FaultInjectingProvider {
    fn forward(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        match &self.inner {
            Some(inner) => inner.call(request),
            None => Err(ProviderError::Transport("no backend".into())),
        }
    }
}
