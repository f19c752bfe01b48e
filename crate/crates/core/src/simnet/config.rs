//! Simulation parameters and the seven named system configurations.

use std::fmt;
use std::str::FromStr;

use crate::coherence::Flavor;
use crate::selector::{HardwareProfile, RequestType, Selection, SelectionMap};
use crate::trace::{AccessKind, AccessTrace, DeviceClass};
use crate::WordMask;

/// Named system configuration: four static flavor pairings and three
/// flexible variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NamedConfig {
    /// MESI CPUs, GPU-coherence GPUs.
    Smg,
    /// MESI CPUs, DeNovo GPUs.
    Smd,
    /// DeNovo CPUs, GPU-coherence GPUs.
    Sdg,
    /// DeNovo everywhere.
    Sdd,
    /// Per-access selection without forwarding or prediction.
    Fcs,
    /// Per-access selection with forwarded write-throughs.
    FcsFwd,
    /// Per-access selection with forwarding and owner prediction.
    FcsPred,
}

impl NamedConfig {
    pub const ALL: [NamedConfig; 7] = [
        NamedConfig::Smg,
        NamedConfig::Smd,
        NamedConfig::Sdg,
        NamedConfig::Sdd,
        NamedConfig::Fcs,
        NamedConfig::FcsFwd,
        NamedConfig::FcsPred,
    ];

    pub fn token(self) -> &'static str {
        match self {
            NamedConfig::Smg => "SMG",
            NamedConfig::Smd => "SMD",
            NamedConfig::Sdg => "SDG",
            NamedConfig::Sdd => "SDD",
            NamedConfig::Fcs => "FCS",
            NamedConfig::FcsFwd => "FCS+fwd",
            NamedConfig::FcsPred => "FCS+pred",
        }
    }

    /// Flavors of CPU and GPU caches.
    pub fn flavors(self) -> (Flavor, Flavor) {
        use Flavor::*;
        match self {
            NamedConfig::Smg => (Mesi, Gpu),
            NamedConfig::Smd => (Mesi, DeNovo),
            NamedConfig::Sdg => (DeNovo, Gpu),
            NamedConfig::Sdd => (DeNovo, DeNovo),
            _ => (Flex, Flex),
        }
    }

    pub fn is_flexible(self) -> bool {
        matches!(self, NamedConfig::Fcs | NamedConfig::FcsFwd | NamedConfig::FcsPred)
    }

    /// Hardware features the selector may assume; `None` for static configs.
    pub fn profile(self) -> Option<HardwareProfile> {
        match self {
            NamedConfig::Fcs => Some(HardwareProfile::with_features(false, false)),
            NamedConfig::FcsFwd => Some(HardwareProfile::with_features(true, false)),
            NamedConfig::FcsPred => Some(HardwareProfile::with_features(true, true)),
            _ => None,
        }
    }

    pub fn sim_config(self, t: &AccessTrace) -> SimConfig {
        let (cpu, gpu) = self.flavors();
        let profile = self.profile();
        SimConfig {
            name: self.token().to_string(),
            flavors: t
                .core_table
                .iter()
                .map(|d| match d {
                    DeviceClass::Cpu => cpu,
                    DeviceClass::Gpu => gpu,
                })
                .collect(),
            enable_wt_forwarding: profile.as_ref().is_some_and(|p| p.supports_wt_forwarding),
            enable_owner_prediction: profile.as_ref().is_some_and(|p| p.supports_owner_prediction),
            ..SimConfig::default()
        }
    }
}

impl fmt::Display for NamedConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for NamedConfig {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        NamedConfig::ALL.into_iter().find(|c| c.token().eq_ignore_ascii_case(s.trim())).ok_or_else(|| {
            let names: Vec<_> = NamedConfig::ALL.iter().map(|c| c.token()).collect();
            format!("unknown configuration `{s}`; valid names: {}", names.join(", "))
        })
    }
}

/// Everything a simulation run needs besides the trace and selection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimConfig {
    pub name: String,
    /// One flavor per core.
    pub flavors: Vec<Flavor>,
    pub hop_cycles: u64,
    pub llc_cycles: u64,
    pub l1_hit_cycles: u64,
    pub enable_wt_forwarding: bool,
    pub enable_owner_prediction: bool,
    pub header_bytes: u32,
    pub word_bytes: u32,
    pub mesh_dim: u32,
    /// Mesh tile of the LLC; cores occupy tiles in id order.
    pub llc_tile: u32,
    pub gpu_load_window: usize,
    pub cpu_load_window: usize,
    pub write_buffer_entries: usize,
    pub max_forward_retries: u32,
    /// Keep every message in [`super::SimResult::msg_log`].
    pub record_messages: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            name: "custom".into(),
            flavors: Vec::new(),
            hop_cycles: 8,
            llc_cycles: 20,
            l1_hit_cycles: 1,
            enable_wt_forwarding: true,
            enable_owner_prediction: true,
            header_bytes: 8,
            word_bytes: 4,
            mesh_dim: 4,
            llc_tile: 10,
            gpu_load_window: 16,
            cpu_load_window: 1,
            write_buffer_entries: 32,
            max_forward_retries: 2,
            record_messages: false,
        }
    }
}

impl SimConfig {
    pub fn check(&self, t: &AccessTrace) -> Result<(), String> {
        if self.flavors.len() != t.n_cores() {
            return Err(format!("config has {} flavors for {} cores", self.flavors.len(), t.n_cores()));
        }
        if self.mesh_dim == 0 || self.llc_tile >= self.mesh_dim * self.mesh_dim {
            return Err("LLC tile lies outside the mesh".into());
        }
        if self.gpu_load_window == 0 || self.cpu_load_window == 0 || self.write_buffer_entries == 0 {
            return Err("load windows and write buffer must be non-empty".into());
        }
        if t.n_cores() > 64 {
            return Err("at most 64 cores are supported".into());
        }
        Ok(())
    }

    /// Whether the request can be issued by this system.
    pub fn capable_of(&self, req: RequestType) -> bool {
        (self.enable_wt_forwarding || !req.is_forwarded() && !matches!(req, RequestType::ReqWTo | RequestType::ReqWToData))
            && (self.enable_owner_prediction || !req.is_predicted())
    }
}

/// Request a fixed-protocol cache issues for an access, by flavor.
pub fn static_request(flavor: Flavor, kind: AccessKind) -> (RequestType, bool) {
    use RequestType::*;
    // (type, whole line)
    match (flavor, kind) {
        (Flavor::Mesi, AccessKind::Load) => (ReqS, true),
        (Flavor::Mesi, _) => (ReqOData, true),
        (Flavor::DeNovo, AccessKind::Load) => (ReqV, false),
        (Flavor::DeNovo, AccessKind::Store) => (ReqO, false),
        (Flavor::DeNovo, AccessKind::Rmw) => (ReqOData, false),
        (Flavor::Gpu, AccessKind::Load) => (ReqV, true),
        (Flavor::Gpu, AccessKind::Store) => (ReqWT, false),
        (Flavor::Gpu, AccessKind::Rmw) => (ReqWTData, false),
        (Flavor::Flex, AccessKind::Load) => (ReqV, false),
        (Flavor::Flex, AccessKind::Store) => (ReqWT, false),
        (Flavor::Flex, AccessKind::Rmw) => (ReqWTData, false),
    }
}

/// Selection map a static configuration implies: every access gets its
/// core flavor's fixed request.
pub fn static_selection(t: &AccessTrace, flavors: &[Flavor]) -> SelectionMap {
    let full = WordMask::full(t.words_per_block());
    let entries = t
        .accesses
        .iter()
        .map(|a| {
            let (req, line) = static_request(flavors[a.core as usize], a.kind);
            Selection { req, mask: if line { full } else { a.word_mask } }
        })
        .collect();
    let mut sel = SelectionMap { entries, ..Default::default() };
    sel.revote(t);
    sel
}
