//! Plot-ready exports computed from finished output files. Each export is a
//! CSV plus a gnuplot script that draws it.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::chain_io::{fmt_real, read_chain, read_report, read_restart, read_sample, OutputPaths};
use crate::error::{Error, Result};
use crate::parallel::{fit_truncated_geometric, truncated_geometric_pmf, ContributionStats};
use crate::refinement::{autocorrelation, effective_sample_size, refine};
use crate::spec::FileEncoding;

/// Lags exported by the `acf` table.
pub const ACF_MAX_LAG: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Export {
    Stats,
    Acf,
    Covmat,
    Contrib,
}

impl Export {
    pub fn name(self) -> &'static str {
        match self {
            Export::Stats => "stats",
            Export::Acf => "acf",
            Export::Covmat => "covmat",
            Export::Contrib => "contrib",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExportFiles {
    pub csv: PathBuf,
    pub script: PathBuf,
}

fn existing_paths(prefix: &Path) -> Result<OutputPaths> {
    [FileEncoding::Ascii, FileEncoding::Binary]
        .into_iter()
        .map(|e| OutputPaths::new(prefix, e))
        .find(|p| p.chain.exists())
        .ok_or_else(|| {
            Error::Usage(format!("no chain file found for prefix {}", prefix.display()))
        })
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Usage(format!("missing output file {}", path.display())))
    }
}

/// Writes `<prefix>_<what>.csv` and `<prefix>_<what>.gp`.
pub fn export(prefix: impl AsRef<Path>, what: Export) -> Result<ExportFiles> {
    let paths = existing_paths(prefix.as_ref())?;
    let (csv, script) = match what {
        Export::Stats => stats(&paths)?,
        Export::Acf => acf(&paths)?,
        Export::Covmat => covmat(&paths)?,
        Export::Contrib => contrib(&paths)?,
    };
    let files = ExportFiles {
        csv: paths.sibling(&format!("{}.csv", what.name())),
        script: paths.sibling(&format!("{}.gp", what.name())),
    };
    let data_name = files.csv.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let script = format!(
        "set datafile separator ','\nset key autotitle columnhead\nset grid\n{}",
        script.replace("{data}", &data_name)
    );
    std::fs::write(&files.csv, csv).map_err(|e| Error::io(&files.csv, e))?;
    std::fs::write(&files.script, script).map_err(|e| Error::io(&files.script, e))?;
    Ok(files)
}

fn stats(paths: &OutputPaths) -> Result<(String, String)> {
    let chain = read_chain(&paths.chain)?;
    let last = chain
        .rows
        .last()
        .ok_or_else(|| Error::Usage(format!("{} holds no rows", paths.chain.display())))?;
    let burnin = last.burnin_loc as usize;
    let refined = refine(&chain, burnin);
    let mut s = String::from("quantity,value\n");
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k},{v}");
    };
    kv("iterations", chain.total_weight().to_string());
    kv("accepted", chain.rows.len().to_string());
    kv("meanAcceptanceRate", fmt_real(last.mean_accept_rate));
    kv("burninLocation", burnin.to_string());
    kv("effectiveSampleSize", fmt_real(effective_sample_size(&chain, burnin)));
    kv("refinedSampleSize", refined.len().to_string());
    for (i, t) in refined.iac_history.iter().enumerate() {
        kv(&format!("integratedAutocorrelationPass{}", i + 1), fmt_real(*t));
    }
    let script = "set style fill solid 0.5\nset xtics rotate by -45\nplot '{data}' using 2:xtic(1) with boxes\n";
    Ok((s, script.to_string()))
}

fn acf(paths: &OutputPaths) -> Result<(String, String)> {
    require(&paths.sample)?;
    let chain = read_chain(&paths.chain)?;
    let burnin = chain.rows.last().map_or(0, |r| r.burnin_loc as usize);
    let sample = read_sample(&paths.sample)?;
    let ndim = chain.ndim;
    let mut series: Vec<(String, Vec<f64>)> = Vec::new();
    series.push(("chain_logFunc".into(), autocorrelation(&chain.expand_column(None, burnin))));
    for d in 0..ndim {
        series.push((format!("chain_var{}", d + 1), autocorrelation(&chain.expand_column(Some(d), burnin))));
    }
    series.push(("sample_logFunc".into(), autocorrelation(&sample.logf)));
    for d in 0..ndim {
        let col: Vec<f64> = sample.states.iter().map(|s| s[d]).collect();
        series.push((format!("sample_var{}", d + 1), autocorrelation(&col)));
    }
    let longest = series.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    let lags = longest.min(ACF_MAX_LAG + 1);
    let mut s = String::from("lag");
    for (name, _) in &series {
        s.push(',');
        s.push_str(name);
    }
    s.push('\n');
    for lag in 0..lags {
        s.push_str(&lag.to_string());
        for (_, v) in &series {
            s.push(',');
            if let Some(r) = v.get(lag) {
                s.push_str(&fmt_real(*r));
            }
        }
        s.push('\n');
    }
    let script = format!(
        "set xlabel 'lag'\nset ylabel 'autocorrelation'\nplot for [c=2:{}] '{{data}}' using 1:c with lines\n",
        series.len() + 1
    );
    Ok((s, script))
}

fn covmat(paths: &OutputPaths) -> Result<(String, String)> {
    require(&paths.restart)?;
    let ckpts = read_restart(&paths.restart)?;
    let ndim = ckpts.first().map_or(0, |c| c.ndim());
    let mut s = String::from("checkpoint,iteration,adaptationMeasure");
    for i in 0..ndim {
        for j in i..ndim {
            let _ = write!(s, ",cov_{}_{}", i + 1, j + 1);
        }
    }
    s.push('\n');
    for c in &ckpts {
        let measure = c.adaptation.map_or(0.0, |a| a.measure);
        let _ = write!(s, "{},{},{}", c.checkpoint_index, c.iteration, fmt_real(measure));
        for i in 0..ndim {
            for j in i..ndim {
                let _ = write!(s, ",{}", fmt_real(c.proposal.cov[(i, j)]));
            }
        }
        s.push('\n');
    }
    let entries = ndim * (ndim + 1) / 2;
    let script = format!(
        "set xlabel 'iteration'\nset multiplot layout 2,1\nset logscale y\nplot '{{data}}' using 2:3 with linespoints\nunset logscale y\nplot for [c=4:{}] '{{data}}' using 2:c with lines\nunset multiplot\n",
        3 + entries
    );
    Ok((s, script))
}

fn contrib(paths: &OutputPaths) -> Result<(String, String)> {
    let chain = read_chain(&paths.chain)?;
    let workers = read_report(&paths.report).ok().map_or(1, |r| r.spec.num_workers);
    let counts = ContributionStats::counts_from_chain(&chain, workers);
    let n = counts.len().max(1);
    let total: u64 = counts.iter().sum();
    let mut s = String::from("rank,count,empirical,fitted,fittedP,fitDistance\n");
    if total > 0 {
        let fit = fit_truncated_geometric(&counts, n);
        for (i, c) in counts.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                i + 1,
                c,
                fmt_real(*c as f64 / total as f64),
                fmt_real(truncated_geometric_pmf(fit.fitted_p, i + 1, n)),
                fmt_real(fit.fitted_p),
                fmt_real(fit.fit_distance)
            );
        }
    }
    let script = "set xlabel 'rank'\nset ylabel 'fraction of accepted states'\nset logscale y\nplot '{data}' using 1:3 with points pt 7, '' using 1:4 with lines\n";
    Ok((s, script.to_string()))
}
