use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapters::{count_params, AdapterFlags, AdapterHyper, AdapterSet, ParamCounts};
use crate::encoder::ArchShape;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
    /// Reported for reference only.
    Info,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Info => "INFO",
        }
    }
}

/// A parameter figure as published: a mantissa with a K/M suffix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishedCount {
    pub value: u64,
    pub sig_figs: u32,
}

impl PublishedCount {
    /// Parses `"1.2 M"`, `"9 K"`, `"24"`.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        let (num, mult) = match s.strip_suffix('M').or_else(|| s.strip_suffix('K')) {
            Some(rest) => (rest.trim(), if s.ends_with('M') { 1_000_000.0 } else { 1_000.0 }),
            None => (s, 1.0),
        };
        let digits: String = num.chars().filter(char::is_ascii_digit).collect();
        let sig_figs = digits.trim_start_matches('0').len().max(1) as u32;
        let v: f64 = num.parse().ok()?;
        Some(PublishedCount { value: (v * mult).round() as u64, sig_figs })
    }
}

/// Rounds `n` to `sig` significant figures.
pub fn round_sig(n: u64, sig: u32) -> u64 {
    if n == 0 {
        return 0;
    }
    let digits = n.ilog10() + 1;
    if digits <= sig {
        return n;
    }
    let unit = 10u64.pow(digits - sig);
    (n + unit / 2) / unit * unit
}

/// Two significant figures with a K/M suffix; exact below 1000.
pub fn render_count(n: u64) -> String {
    if n < 1000 {
        return n.to_string();
    }
    let r = round_sig(n, 2);
    let (unit, suffix) = if r >= 1_000_000 { (1_000_000, "M") } else { (1_000, "K") };
    let whole = r / unit;
    let frac = (r % unit) * 10 / unit;
    if whole >= 10 || frac == 0 {
        format!("{whole} {suffix}")
    } else {
        format!("{whole}.{frac} {suffix}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditCell {
    pub preset: String,
    pub exact: u64,
    pub rendered: String,
    pub published: String,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    /// `BA`, `BA+LoRA`, ..., `FT`, `PT`.
    pub label: String,
    pub flags: Option<AdapterFlags>,
    pub cells: Vec<AuditCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditTable {
    pub presets: Vec<String>,
    pub hyper: AdapterHyper,
    pub rows: Vec<AuditRow>,
}

/// Published figures per row, `[wav2vec2-base, hubert-large]`.
const PUBLISHED: [(&str, [&str; 2]); 9] = [
    ("BA", ["1.2 M", "3.2 M"]),
    ("LoRA", ["1.3 M", "3.5 M"]),
    ("WS", ["12", "24"]),
    ("WG", ["9 K", "25 K"]),
    ("BA+LoRA", ["2.5 M", "6.7 M"]),
    ("BA+LoRA+WS", ["2.5 M", "6.7 M"]),
    ("BA+LoRA+WS+WG", ["2.5 M", "6.7 M"]),
    ("FT", ["90 M", "311 M"]),
    ("PT", ["0", "0"]),
];

fn published(label: &str, preset: &str) -> Option<&'static str> {
    let column = match preset {
        "wav2vec2-base" => 0,
        "hubert-large" => 1,
        _ => return None,
    };
    PUBLISHED.iter().find(|(l, _)| *l == label).map(|(_, v)| v[column])
}

fn verdict(exact: u64, published: &str) -> Verdict {
    match PublishedCount::parse(published) {
        Some(p) if round_sig(exact, p.sig_figs) == p.value => Verdict::Pass,
        _ => Verdict::Fail,
    }
}

/// Counts every adaptor row over `presets` by instantiating the adaptor
/// sets. Only presets named `wav2vec2-base` and `hubert-large` carry
/// published figures. FT rows are informational: the linear frontend
/// stands in for a convolutional feature extractor.
pub fn audit_params(presets: &[(&str, ArchShape)], hyper: AdapterHyper) -> Result<AuditTable> {
    let mut measured: Vec<ParamCounts> = Vec::with_capacity(presets.len());
    for (_, arch) in presets {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let aset = AdapterSet::new(arch, AdapterFlags::ALL, hyper, &mut rng)?;
        let counts = count_params(&aset, arch)?;
        debug_assert_eq!(counts, ParamCounts::closed_form(arch, AdapterFlags::ALL, hyper));
        measured.push(counts);
    }

    let cell = |column: usize, label: &str, exact: u64, informational: bool| {
        let published = published(label, presets[column].0).unwrap_or("-").to_string();
        let verdict = if informational || published == "-" { Verdict::Info } else { verdict(exact, &published) };
        AuditCell { preset: presets[column].0.to_string(), exact, rendered: render_count(exact), published, verdict }
    };

    let mut rows = Vec::new();
    for flags in AdapterFlags::table_rows() {
        let label = flags.label();
        let cells = measured
            .iter()
            .enumerate()
            .map(|(i, all)| {
                let exact = (if flags.ba { all.ba } else { 0 })
                    + (if flags.lora { all.lora } else { 0 })
                    + (if flags.ws { all.ws } else { 0 })
                    + (if flags.wg { all.wg } else { 0 });
                cell(i, &label, exact, false)
            })
            .collect();
        rows.push(AuditRow { label, flags: Some(flags), cells });
    }
    let ft = presets.iter().enumerate().map(|(i, (_, a))| cell(i, "FT", a.block_param_count() as u64, true)).collect();
    rows.push(AuditRow { label: "FT".into(), flags: None, cells: ft });
    let pt = (0..presets.len()).map(|i| cell(i, "PT", 0, false)).collect();
    rows.push(AuditRow { label: "PT".into(), flags: None, cells: pt });

    Ok(AuditTable { presets: presets.iter().map(|(n, _)| n.to_string()).collect(), hyper, rows })
}

/// Both published upstream shapes with the default adaptor sizes.
pub fn audit_published() -> Result<AuditTable> {
    audit_params(
        &[("wav2vec2-base", ArchShape::wav2vec2_base()), ("hubert-large", ArchShape::hubert_large())],
        AdapterHyper::default(),
    )
}

impl AuditTable {
    pub fn cells(&self) -> impl Iterator<Item = (&AuditRow, &AuditCell)> {
        self.rows.iter().flat_map(|r| r.cells.iter().map(move |c| (r, c)))
    }

    pub fn all_pass(&self) -> bool {
        self.cells().all(|(_, c)| c.verdict != Verdict::Fail)
    }

    pub fn to_csv(&self) -> String {
        let rows = self.cells().map(|(row, c)| {
            [row.label.clone(), c.preset.clone(), c.exact.to_string(), c.rendered.clone(), c.published.clone(), c.verdict.as_str().to_string()]
        });
        crate::table::csv_string(&["row", "preset", "exact", "rendered", "published", "verdict"], rows)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        write!(out, "{:<4}{:<6}{:<4}{:<4}", "BA", "LoRA", "WS", "WG").unwrap();
        for p in &self.presets {
            write!(out, " | {:<14}{:>10}{:>11}{:>6}", p, "exact", "published", "").unwrap();
        }
        out.push('\n');
        for row in &self.rows {
            match row.flags {
                Some(f) => {
                    let tick = |b: bool| if b { "✓" } else { "" };
                    write!(out, "{:<4}{:<6}{:<4}{:<4}", tick(f.ba), tick(f.lora), tick(f.ws), tick(f.wg)).unwrap();
                }
                None => write!(out, "{:<18}", row.label).unwrap(),
            }
            for c in &row.cells {
                write!(out, " | {:<14}{:>10}{:>11}{:>6}", c.rendered, c.exact, c.published, c.verdict.as_str()).unwrap();
            }
            out.push('\n');
        }
        out
    }
}
