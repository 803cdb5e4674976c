use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{PipelineError, ReportBundle, Stage};
use crate::util::{fmt7, fmt_fixed};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Text,
}

impl FromStr for Format {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "text" => Ok(Format::Text),
            other => Err(PipelineError::Usage(format!("unknown format `{other}` (expected csv, json or text)"))),
        }
    }
}

/// `*` for p < 0.001, `**` for p < 0.01, nothing otherwise.
pub fn significance_marker(p: f64) -> &'static str {
    if p < 0.001 {
        "*"
    } else if p < 0.01 {
        "**"
    } else {
        ""
    }
}

fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf, PipelineError> {
    let target = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| PipelineError::io(dir, e))?;
    tmp.write_all(contents).map_err(|e| PipelineError::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| PipelineError::io(tmp.path(), e))?;
    tmp.persist(&target).map_err(|e| PipelineError::io(&target, e.error))?;
    Ok(target)
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes the bundle in each format to `dir` and returns the files written.
pub fn emit_report(bundle: &ReportBundle, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let mut formats = formats.to_vec();
    formats.sort();
    formats.dedup();
    let mut written = Vec::new();
    for f in formats {
        match f {
            Format::Json => written.push(write_atomic(dir, "report.json", bundle.to_json().as_bytes())?),
            Format::Text => written.push(write_atomic(dir, "report.txt", render_text(bundle).as_bytes())?),
            Format::Csv => {
                for (name, table) in csv_tables(bundle) {
                    written.push(write_atomic(dir, &name, &table)?);
                }
            }
        }
    }
    Ok(written)
}

struct Csv(csv::Writer<Vec<u8>>);

impl Csv {
    fn new<I: IntoIterator<Item = S>, S: AsRef<[u8]>>(header: I) -> Self {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory write");
        Csv(w)
    }

    fn row<I: IntoIterator<Item = S>, S: AsRef<[u8]>>(&mut self, row: I) {
        self.0.write_record(row).expect("in-memory write");
    }

    fn finish(self) -> Vec<u8> {
        self.0.into_inner().expect("in-memory flush")
    }
}

fn opt7(v: Option<f64>) -> String {
    v.map(fmt7).unwrap_or_default()
}

fn csv_tables(bundle: &ReportBundle) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let p = &bundle.provenance;
    let mut prov = Csv::new(["key", "value"]);
    prov.row(["tool", &p.tool]);
    prov.row(["version", &p.version]);
    prov.row(["config_sha256", &p.config_sha256]);
    prov.row(["dataset_sha256", &p.dataset_sha256]);
    for (stage, seed) in &p.seeds {
        prov.row([format!("seed.{stage}"), seed.to_string()]);
    }
    prov.row(["status", if bundle.status == super::BundleStatus::Complete { "COMPLETE" } else { "INCOMPLETE" }]);
    out.push(("provenance.csv".to_string(), prov.finish()));

    if let Some(tables) = bundle.dea.completed() {
        for t in tables {
            let mut header = vec!["dmu".to_string()];
            header.extend(t.periods.iter().cloned());
            header.push("mean".into());
            let mut w = Csv::new(&header);
            for (d, dmu) in t.dmus.iter().enumerate() {
                let mut row = vec![dmu.clone()];
                row.extend(t.scores[d].iter().map(|&s| fmt7(s)));
                row.push(fmt7(t.means[d]));
                w.row(&row);
            }
            out.push((format!("efficiency_{}.csv", file_stem(&t.analysis)), w.finish()));
        }
    }
    if let Some(tables) = bundle.cluster.completed() {
        for t in tables {
            let stem = file_stem(&t.analysis);
            let mut w = Csv::new([
                "k", "sse_within", "ss_between", "df_between", "df_within", "f", "p", "incremental_f", "incremental_p", "significant",
                "selected", "flag",
            ]);
            for e in &t.sweep.entries {
                let flag = e.anova.flag.map(|f| serde_json::to_value(f).unwrap().as_str().unwrap_or("").to_string());
                w.row([
                    e.k.to_string(),
                    fmt7(e.solution.sse_within),
                    fmt7(e.anova.ss_between),
                    e.anova.df_between.to_string(),
                    e.anova.df_within.to_string(),
                    fmt7(e.anova.f_value),
                    fmt7(e.anova.p_value),
                    fmt7(e.incremental_f),
                    fmt7(e.incremental_p),
                    e.significant.to_string(),
                    (Some(e.k) == t.selected_k).to_string(),
                    flag.unwrap_or_default(),
                ]);
            }
            out.push((format!("cluster_sweep_{stem}.csv"), w.finish()));
            let mut w = Csv::new(["dmu", "cluster", "mean"]);
            for m in &t.membership {
                w.row([m.dmu.clone(), m.cluster.to_string(), fmt7(m.mean)]);
            }
            out.push((format!("cluster_membership_{stem}.csv"), w.finish()));
            let mut w = Csv::new(["cluster", "centroid", "size"]);
            for (c, centroid) in t.centroids.iter().enumerate() {
                let size = t.membership.iter().filter(|m| m.cluster == c + 1).count();
                w.row([(c + 1).to_string(), fmt7(*centroid), size.to_string()]);
            }
            out.push((format!("cluster_centroids_{stem}.csv"), w.finish()));
        }
    }
    if let Some(c) = bundle.correspondence.completed() {
        let mut header = vec!["dmu".to_string()];
        header.extend(c.analyses.iter().cloned());
        let mut w = Csv::new(&header);
        for r in &c.rows {
            let mut row = vec![r.dmu.clone()];
            row.extend(r.clusters.iter().map(usize::to_string));
            w.row(&row);
        }
        out.push(("correspondence.csv".to_string(), w.finish()));
        for t in &c.tables {
            let mut header = vec![format!("{}\\{}", t.rows, t.columns)];
            header.extend((1..=t.counts.first().map_or(0, Vec::len)).map(|j| j.to_string()));
            let mut w = Csv::new(&header);
            for (i, counts) in t.counts.iter().enumerate() {
                let mut row = vec![(i + 1).to_string()];
                row.extend(counts.iter().map(usize::to_string));
                w.row(&row);
            }
            let mut last = vec![String::new(); header.len()];
            last[0] = format!("agreement {} of {}", t.agreement, t.total);
            w.row(&last);
            out.push((format!("contingency_{}_{}.csv", file_stem(&t.rows), file_stem(&t.columns)), w.finish()));
        }
    }
    if let Some(r) = bundle.pls.completed() {
        let mut w = Csv::new(["model", "from", "to", "beta", "std_error", "t", "p", "marker"]);
        let mut r2 = Csv::new(["model", "latent", "r_squared"]);
        for m in &r.models {
            for path in &m.estimates.paths {
                let inf = path.inference.as_ref();
                w.row([
                    m.name.clone(),
                    path.from.clone(),
                    path.to.clone(),
                    fmt7(path.beta),
                    opt7(inf.map(|i| i.std_error)),
                    opt7(inf.map(|i| i.t_statistic)),
                    opt7(inf.map(|i| i.p_value)),
                    inf.map(|i| significance_marker(i.p_value)).unwrap_or("").to_string(),
                ]);
            }
            for (latent, v) in &m.estimates.r_squared {
                r2.row([m.name.clone(), latent.clone(), fmt7(*v)]);
            }
        }
        out.push(("pls_paths.csv".to_string(), w.finish()));
        out.push(("pls_r_squared.csv".to_string(), r2.finish()));
        if !r.cobb_douglas.is_empty() {
            let mut w = Csv::new(["model", "target", "term", "coefficient", "std_error", "t", "p", "r_squared"]);
            for cd in &r.cobb_douglas {
                for (j, term) in cd.fit.names.iter().enumerate() {
                    w.row([
                        cd.name.clone(),
                        cd.target.clone(),
                        term.clone(),
                        fmt7(cd.fit.coefficients[j]),
                        fmt7(cd.fit.std_errors[j]),
                        fmt7(cd.fit.t_statistics[j]),
                        fmt7(cd.fit.p_values[j]),
                        fmt7(cd.fit.r_squared),
                    ]);
                }
            }
            out.push(("cobb_douglas.csv".to_string(), w.finish()));
        }
    }
    out
}

/// Left-aligns the first column and right-aligns the rest.
fn aligned(rows: &[Vec<String>]) -> String {
    let ncols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0; ncols];
    for r in rows {
        for (j, cell) in r.iter().enumerate() {
            widths[j] = widths[j].max(cell.chars().count());
        }
    }
    let mut s = String::new();
    for r in rows {
        let mut line = String::new();
        for (j, cell) in r.iter().enumerate() {
            if j == 0 {
                let _ = write!(line, "{cell:<w$}", w = widths[0]);
            } else {
                let _ = write!(line, "  {cell:>w$}", w = widths[j]);
            }
        }
        s.push_str(line.trim_end());
        s.push('\n');
    }
    s
}

fn stage_note<T>(s: &mut String, title: &str, stage: &Stage<T>) -> bool {
    match stage {
        Stage::Completed(_) => true,
        Stage::Pending => {
            let _ = writeln!(s, "== {title} ==\nnot run\n");
            false
        }
        Stage::Skipped(why) => {
            let _ = writeln!(s, "== {title} ==\nskipped: {why}\n");
            false
        }
        Stage::Failed(why) => {
            let _ = writeln!(s, "== {title} ==\nFAILED: {why}\n");
            false
        }
    }
}

/// Human-readable report: fixed-width tables, 7 decimals for scores and
/// statistics, 3 decimals plus markers in the path-coefficient grid.
pub fn render_text(bundle: &ReportBundle) -> String {
    let mut s = String::new();
    let p = &bundle.provenance;
    let _ = writeln!(s, "{} {} report", p.tool, p.version);
    let _ = writeln!(s, "config sha256:  {}", p.config_sha256);
    let _ = writeln!(s, "dataset sha256: {}", p.dataset_sha256);
    for (stage, seed) in &p.seeds {
        let _ = writeln!(s, "seed ({stage}): {seed}");
    }
    let status = if bundle.status == super::BundleStatus::Complete { "COMPLETE" } else { "INCOMPLETE" };
    let _ = writeln!(s, "status: {status}");
    for d in &bundle.diagnostics {
        let _ = writeln!(s, "error in {} stage: {}", d.stage, d.message);
    }
    s.push('\n');

    if stage_note(&mut s, "DEA efficiency", &bundle.dea) {
        for t in bundle.dea.completed().unwrap() {
            let rts = serde_json::to_value(t.spec.returns_to_scale).unwrap();
            let orient = serde_json::to_value(t.spec.orientation).unwrap();
            let _ = writeln!(
                s,
                "== DEA efficiency: {} ({}, {} orientation) ==",
                t.analysis,
                rts.as_str().unwrap_or(""),
                orient.as_str().unwrap_or("")
            );
            let mut rows = vec![std::iter::once("DMU".to_string())
                .chain(t.periods.iter().cloned())
                .chain(std::iter::once("Mean".to_string()))
                .collect::<Vec<_>>()];
            for (d, dmu) in t.dmus.iter().enumerate() {
                let mut r = vec![dmu.clone()];
                r.extend(t.scores[d].iter().map(|&v| fmt7(v)));
                r.push(fmt7(t.means[d]));
                rows.push(r);
            }
            s.push_str(&aligned(&rows));
            if !t.fully_efficient.is_empty() {
                let _ = writeln!(s, "efficient in every period: {}", t.fully_efficient.join(", "));
            }
            for w in &t.warnings {
                let _ = writeln!(s, "warning: {}", w.message);
            }
            s.push('\n');
        }
    }

    if stage_note(&mut s, "Cluster analysis and ANOVA", &bundle.cluster) {
        for t in bundle.cluster.completed().unwrap() {
            let _ = writeln!(s, "== Cluster analysis and ANOVA: {} ==", t.analysis);
            let mut rows = vec![["k", "SSW", "F", "df", "Sig.", "F(k-1→k)", ""].map(String::from).to_vec()];
            for e in &t.sweep.entries {
                rows.push(vec![
                    e.k.to_string(),
                    fmt7(e.solution.sse_within),
                    fmt7(e.anova.f_value),
                    format!("{}, {}", e.anova.df_between, e.anova.df_within),
                    fmt7(e.anova.p_value),
                    fmt7(e.incremental_f),
                    if Some(e.k) == t.selected_k { "selected".into() } else { String::new() },
                ]);
            }
            s.push_str(&aligned(&rows));
            match t.selected_k {
                Some(k) => {
                    let _ = writeln!(s, "selected k = {k}; rule: {}", t.sweep.selection_rule);
                    let mut rows = vec![vec!["Cluster".to_string(), "Centroid".into(), "Size".into(), "Members".into()]];
                    for (c, centroid) in t.centroids.iter().enumerate() {
                        let members: Vec<&str> =
                            t.membership.iter().filter(|m| m.cluster == c + 1).map(|m| m.dmu.as_str()).collect();
                        rows.push(vec![(c + 1).to_string(), fmt7(*centroid), members.len().to_string(), members.join(" ")]);
                    }
                    s.push_str(&aligned(&rows));
                }
                None => {
                    let _ = writeln!(s, "no k is significant at alpha = {} (NO_SIGNIFICANT_K)", t.sweep.alpha);
                }
            }
            s.push('\n');
        }
        for c in &bundle.caveats {
            let _ = writeln!(s, "note: {c}");
        }
        s.push('\n');
    }

    if stage_note(&mut s, "Cluster correspondence", &bundle.correspondence) {
        let c = bundle.correspondence.completed().unwrap();
        let _ = writeln!(s, "== Cluster correspondence ==");
        let mut rows = vec![std::iter::once("DMU".to_string()).chain(c.analyses.iter().cloned()).collect::<Vec<_>>()];
        for r in &c.rows {
            rows.push(std::iter::once(r.dmu.clone()).chain(r.clusters.iter().map(usize::to_string)).collect());
        }
        s.push_str(&aligned(&rows));
        for t in &c.tables {
            let _ = writeln!(s, "\n{} (rows) × {} (columns)", t.rows, t.columns);
            let k2 = t.counts.first().map_or(0, Vec::len);
            let mut rows = vec![std::iter::once(String::new()).chain((1..=k2).map(|j| j.to_string())).collect::<Vec<_>>()];
            for (i, counts) in t.counts.iter().enumerate() {
                rows.push(std::iter::once((i + 1).to_string()).chain(counts.iter().map(usize::to_string)).collect());
            }
            s.push_str(&aligned(&rows));
            let _ = writeln!(
                s,
                "same cluster in both: {} of {} ({}%)",
                t.agreement,
                t.total,
                fmt_fixed(100.0 * t.agreement_rate, 1)
            );
        }
        s.push('\n');
    }

    if stage_note(&mut s, "PLS path coefficients", &bundle.pls) {
        let r = bundle.pls.completed().unwrap();
        let _ = writeln!(s, "== PLS path coefficients (bootstrap B = {}, seed {}) ==", r.bootstrap, r.seed);
        let mut from: Vec<&str> = Vec::new();
        let mut to: Vec<&str> = Vec::new();
        for m in &r.models {
            for p in &m.estimates.paths {
                if !from.contains(&p.from.as_str()) {
                    from.push(&p.from);
                }
                if !to.contains(&p.to.as_str()) {
                    to.push(&p.to);
                }
            }
        }
        let mut rows = vec![std::iter::once(String::new()).chain(to.iter().map(|t| t.to_string())).collect::<Vec<_>>()];
        for f in &from {
            let mut row = vec![f.to_string()];
            for t in &to {
                let cell = r
                    .models
                    .iter()
                    .find_map(|m| m.estimates.path(f, t))
                    .map(|p| {
                        let marker = p.inference.as_ref().map_or("", |i| significance_marker(i.p_value));
                        format!("{}{marker}", fmt_fixed(p.beta, 3))
                    })
                    .unwrap_or_default();
                row.push(cell);
            }
            rows.push(row);
        }
        s.push_str(&aligned(&rows));
        let _ = writeln!(s, "* p < 0.001, ** p < 0.01");
        let mut rows = vec![vec!["Model".to_string(), "Latent".into(), "R²".into(), "Converged".into()]];
        for m in &r.models {
            for (latent, v) in &m.estimates.r_squared {
                rows.push(vec![m.name.clone(), latent.clone(), fmt7(*v), m.estimates.converged.to_string()]);
            }
        }
        s.push('\n');
        s.push_str(&aligned(&rows));
        for cd in &r.cobb_douglas {
            let _ = writeln!(
                s,
                "\n== Log-linear OLS: {} on {} (n = {}, R² = {}) ==",
                cd.target,
                cd.name,
                cd.observations,
                fmt7(cd.fit.r_squared)
            );
            let mut rows = vec![["Term", "Coefficient", "Std. error", "t", "p"].map(String::from).to_vec()];
            for (j, term) in cd.fit.names.iter().enumerate() {
                rows.push(vec![
                    term.clone(),
                    fmt7(cd.fit.coefficients[j]),
                    fmt7(cd.fit.std_errors[j]),
                    fmt7(cd.fit.t_statistics[j]),
                    format!("{}{}", fmt7(cd.fit.p_values[j]), significance_marker(cd.fit.p_values[j])),
                ]);
            }
            s.push_str(&aligned(&rows));
        }
        s.push('\n');
    }
    s
}
