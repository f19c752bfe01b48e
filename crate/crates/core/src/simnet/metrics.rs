//! Run metrics and their CSV/text renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::selector::RequestType;
use crate::Pc;

/// Traffic, latency proxy and protocol counters of one run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Metrics {
    pub config: String,
    pub benchmark: String,
    /// Cycle the last core finished.
    pub cycles: u64,
    pub core_cycles: Vec<u64>,
    pub bytes: u64,
    pub messages: u64,
    /// Request messages (to the LLC, forwarded, or direct) by type.
    pub requests_by_type: BTreeMap<RequestType, u64>,
    /// All messages by class label.
    pub messages_by_class: BTreeMap<String, u64>,
    /// Network traversals of transactions started by cores.
    pub hops: u64,
    pub llc_lookups: u64,
    pub llc_lookups_by_pc: BTreeMap<Pc, u64>,
    pub l1_hits: u64,
    pub accesses: u64,
    pub pred_hits: u64,
    pub pred_misses: u64,
    pub nacks: u64,
    /// Loads that returned something other than the sequentially consistent value.
    pub stale_loads: u64,
}

impl Metrics {
    pub fn csv_header() -> String {
        let mut cols: Vec<String> =
            ["config", "benchmark", "cycles", "bytes", "messages", "hops", "llc_lookups", "l1_hits"].map(String::from).to_vec();
        cols.extend(RequestType::ALL.iter().map(|t| format!("msgs_{t}")));
        cols.extend(["pred_hits", "pred_misses", "nacks", "stale_loads"].map(String::from));
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.config.clone(),
            self.benchmark.clone(),
            self.cycles.to_string(),
            self.bytes.to_string(),
            self.messages.to_string(),
            self.hops.to_string(),
            self.llc_lookups.to_string(),
            self.l1_hits.to_string(),
        ];
        cols.extend(RequestType::ALL.iter().map(|t| self.requests_by_type.get(t).copied().unwrap_or(0).to_string()));
        cols.extend([self.pred_hits, self.pred_misses, self.nacks, self.stale_loads].map(|v| v.to_string()));
        cols.join(",")
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[{} / {}]", self.config, self.benchmark);
        let mut row = |k: &str, v: String| {
            let _ = writeln!(s, "  {k:<15}{v}");
        };
        row("cycles", self.cycles.to_string());
        row("bytes", self.bytes.to_string());
        row("messages", self.messages.to_string());
        row("hops", self.hops.to_string());
        row("llc_lookups", self.llc_lookups.to_string());
        row("l1_hits", format!("{} / {}", self.l1_hits, self.accesses));
        for (t, n) in &self.requests_by_type {
            row(t.token(), n.to_string());
        }
        row("pred_hits", self.pred_hits.to_string());
        row("pred_misses", self.pred_misses.to_string());
        row("nacks", self.nacks.to_string());
        row("stale_loads", self.stale_loads.to_string());
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricsFormat {
    Csv,
    Text,
}

impl std::str::FromStr for MetricsFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(MetricsFormat::Csv),
            "text" => Ok(MetricsFormat::Text),
            _ => Err(format!("unknown format `{s}` (csv, text)")),
        }
    }
}

/// Renders runs in a stable column order. An empty run list yields just the
/// CSV header.
pub fn emit_metrics(runs: &[Metrics], format: MetricsFormat) -> String {
    match format {
        MetricsFormat::Csv => {
            let mut s = Metrics::csv_header();
            s.push('\n');
            for m in runs {
                s.push_str(&m.csv_row());
                s.push('\n');
            }
            s
        }
        MetricsFormat::Text => runs.iter().map(Metrics::text).collect::<Vec<_>>().join("\n"),
    }
}

/// Reads rows written by [`emit_metrics`] in CSV form. Columns are matched
/// by header name, so extra columns are ignored.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<Metrics>, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or("empty metrics file")?.split(',').collect();
    let mut runs = Vec::new();
    for (n, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(format!("row {}: {} cells for {} columns", n + 2, cells.len(), header.len()));
        }
        let mut m = Metrics::default();
        for (col, cell) in header.iter().zip(&cells) {
            let num = || cell.parse::<u64>().map_err(|e| format!("row {}, column {col}: {e}", n + 2));
            match *col {
                "config" => m.config = cell.to_string(),
                "benchmark" => m.benchmark = cell.to_string(),
                "cycles" => m.cycles = num()?,
                "bytes" => m.bytes = num()?,
                "messages" => m.messages = num()?,
                "hops" => m.hops = num()?,
                "llc_lookups" => m.llc_lookups = num()?,
                "l1_hits" => m.l1_hits = num()?,
                "pred_hits" => m.pred_hits = num()?,
                "pred_misses" => m.pred_misses = num()?,
                "nacks" => m.nacks = num()?,
                "stale_loads" => m.stale_loads = num()?,
                c => {
                    if let Some(t) = c.strip_prefix("msgs_").and_then(|t| t.parse::<RequestType>().ok()) {
                        let v = num()?;
                        if v > 0 {
                            m.requests_by_type.insert(t, v);
                        }
                    }
                }
            }
        }
        runs.push(m);
    }
    Ok(runs)
}

/// Bytes and cycles of each run relative to the run of `baseline` on the
/// same benchmark, as CSV.
pub fn normalized_table(runs: &[Metrics], baseline: &str) -> Result<String, String> {
    let mut s = String::from("config,benchmark,bytes_ratio,cycles_ratio\n");
    for m in runs {
        let base = runs
            .iter()
            .find(|b| b.config == baseline && b.benchmark == m.benchmark)
            .ok_or_else(|| format!("no `{baseline}` run for benchmark {}", m.benchmark))?;
        let ratio = |a: u64, b: u64| if b == 0 { f64::NAN } else { a as f64 / b as f64 };
        let _ = writeln!(s, "{},{},{:.4},{:.4}", m.config, m.benchmark, ratio(m.bytes, base.bytes), ratio(m.cycles, base.cycles));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(config: &str, bytes: u64) -> Metrics {
        Metrics { config: config.into(), benchmark: "b".into(), bytes, cycles: 10, ..Default::default() }
    }

    #[test]
    fn empty_csv_is_header_only() {
        let s = emit_metrics(&[], MetricsFormat::Csv);
        assert_eq!(s.lines().count(), 1);
        assert!(s.starts_with("config,benchmark,cycles,bytes"));
    }

    #[test]
    fn rows_share_columns() {
        let s = emit_metrics(&[run("A", 1), run("B", 2)], MetricsFormat::Csv);
        let widths: Vec<usize> = s.lines().map(|l| l.split(',').count()).collect();
        assert_eq!(widths.len(), 3);
        assert!(widths.iter().all(|&w| w == widths[0]));
    }

    #[test]
    fn csv_round_trips() {
        let mut m = run("FCS+pred", 77);
        m.requests_by_type.insert(RequestType::ReqWTo, 5);
        m.nacks = 3;
        let back = parse_metrics_csv(&emit_metrics(&[m.clone()], MetricsFormat::Csv)).unwrap();
        assert_eq!(back, vec![m]);
    }

    #[test]
    fn normalized_bytes() {
        let t = normalized_table(&[run("SDD", 200), run("FCS", 150)], "SDD").unwrap();
        assert!(t.contains("FCS,b,0.7500,1.0000"));
        assert!(normalized_table(&[run("FCS", 1)], "SDD").is_err());
    }
}
