use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use climstar::cluster::{cluster_summary, cross_tab, zone_cross_tab, ClusterAssignment, CutRule, Membership, Scheme};
use climstar::distance::Metric;
use climstar::eval::{frobenius_norm, in_sample, oos_experiment, LossSeries};
use climstar::features::write_trend_csv;
use climstar::mcs::McsReport;
use climstar::panel::{load_adjacency, load_country_meta, load_panel, split_panel, AdjacencyList, TemperaturePanel};
use climstar::pipeline::{Analysis, WeightSource};
use climstar::star::{fit_star, fitted_levels};
use climstar::weights::WeightKind;
use climstar::{forecast as star_forecast, mcs as run_mcs};

use crate::config::RunConfig;
use crate::CliError;

struct Inputs {
    panel: TemperaturePanel,
    adjacency: Option<AdjacencyList>,
    has_meta: bool,
}

/// Validates the whole configuration, then loads the inputs.
fn load(cfg: &RunConfig) -> Result<Inputs, CliError> {
    cfg.validate()?;
    let mut panel = load_panel(cfg.data.panel.as_ref().unwrap(), cfg.data.format)?;
    if let Some(path) = &cfg.data.countries {
        panel.attach_meta(&load_country_meta(path)?)?;
    }
    let adjacency = match &cfg.data.adjacency {
        Some(path) => Some(load_adjacency(path, &panel)?),
        None => None,
    };
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::config(format!("cannot create {}: {e}", cfg.out.display())))?;
    log::info!(
        "panel: {} countries, {}-{}",
        panel.n_countries(),
        panel.first_year(),
        panel.last_year()
    );
    Ok(Inputs {
        panel,
        adjacency,
        has_meta: cfg.data.countries.is_some(),
    })
}

fn out_path(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out.join(name)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
}

fn csv_row<I, T>(w: &mut csv::Writer<std::fs::File>, path: &Path, row: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[u8]>,
{
    w.write_record(row)
        .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> Result<(), CliError> {
    w.flush()
        .map_err(|e| CliError::config(format!("cannot write {}: {e}", path.display())))
}

pub fn trends(cfg: &RunConfig) -> Result<(), CliError> {
    let inputs = load(cfg)?;
    let analysis = Analysis::prepare(&inputs.panel, cfg.pipeline)?;
    let path = out_path(cfg, "trends.csv");
    write_trend_csv(&path, &analysis.ids, &analysis.trends, cfg.pipeline.alpha)?;
    let null = analysis.null_ids();
    println!(
        "{} countries, {} without a significant trend at {}: {}",
        analysis.ids.len(),
        null.len(),
        cfg.pipeline.alpha,
        null.join(", ")
    );
    println!("wrote {}", path.display());
    Ok(())
}

fn parse_cut(spec: &str) -> Result<CutRule, CliError> {
    let bad = || CliError::config(format!("bad cut {spec:?}; use K, groups:K, clusters:K, height:H or auto"));
    let spec = spec.trim().to_ascii_lowercase();
    if spec == "auto" {
        return Ok(CutRule::Auto);
    }
    if let Ok(k) = spec.parse::<usize>() {
        return Ok(CutRule::Clusters(k));
    }
    let (rule, value) = spec.split_once(':').ok_or_else(bad)?;
    match rule {
        "groups" => value.parse().map(CutRule::Groups).map_err(|_| bad()),
        "clusters" => value.parse().map(CutRule::Clusters).map_err(|_| bad()),
        "height" => value.parse().map(CutRule::Height).map_err(|_| bad()),
        _ => Err(bad()),
    }
}

fn membership_label(assign: &ClusterAssignment, id: &str) -> (String, String) {
    match assign.membership(id) {
        Some(Membership::Cluster(k)) => (k.to_string(), assign.name(k)),
        Some(Membership::Idiosyncratic) => (String::new(), "idiosyncratic".into()),
        Some(Membership::Null) => (String::new(), "null".into()),
        None => (String::new(), String::new()),
    }
}

pub fn cluster(mut cfg: RunConfig, scheme: Scheme, cut: Option<&str>, min_size: Option<usize>) -> Result<(), CliError> {
    {
        let opts = match scheme {
            Scheme::A => &mut cfg.pipeline.scheme_a,
            Scheme::B => &mut cfg.pipeline.scheme_b,
            Scheme::C => &mut cfg.pipeline.scheme_c,
        };
        if let Some(spec) = cut {
            opts.cut = parse_cut(spec)?;
        }
        if let Some(m) = min_size {
            opts.min_size = m;
        }
    }
    let inputs = load(&cfg)?;
    let panel = &inputs.panel;
    let mut analysis = Analysis::prepare(panel, cfg.pipeline)?;
    analysis.cluster(scheme)?;
    // Tables pair B with A and C with B
    let partner = match scheme {
        Scheme::A => None,
        Scheme::B => Some(Scheme::A),
        Scheme::C => Some(Scheme::B),
    };
    if let Some(p) = partner {
        if let Err(e) = analysis.cluster(p) {
            log::warn!("skipping the {scheme} x {p} table: {e}");
        }
    }
    let assign = analysis.assignment(scheme);
    let tag = scheme.to_string();

    write_text(&out_path(&cfg, &format!("cluster_{tag}.json")), &assign.to_json()?)?;
    if let Some(den) = analysis.dendrograms.get(&scheme) {
        write_text(&out_path(&cfg, &format!("dendrogram_{tag}.json")), &den.to_json()?)?;
    }
    let slopes: BTreeMap<String, Vec<f64>> = analysis
        .ids
        .iter()
        .zip(&analysis.trends)
        .map(|(id, f)| (id.clone(), vec![f.slope]))
        .collect();
    let summary = cluster_summary(assign, &slopes)?;
    let json = serde_json::to_string_pretty(&summary).map_err(climstar::Error::from)?;
    write_text(&out_path(&cfg, &format!("cluster_{tag}_summary.json")), &json)?;

    // one row per country: boxplot input
    let path = out_path(&cfg, &format!("cluster_{tag}_members.csv"));
    let mut w = csv_writer(&path)?;
    csv_row(&mut w, &path, ["country", "cluster", "name", "slope", "zone"])?;
    for (i, meta) in panel.countries().iter().enumerate() {
        let (k, name) = membership_label(assign, &meta.id);
        let zone = meta.zone.map(|z| z.name().to_string()).unwrap_or_default();
        csv_row(&mut w, &path, [meta.id.clone(), k, name, analysis.trends[i].slope.to_string(), zone])?;
    }
    finish(w, &path)?;

    if inputs.has_meta {
        zone_cross_tab(assign, panel)?.write_csv(out_path(&cfg, &format!("cluster_{tag}_zones.csv")))?;
        write_zone_area(&cfg, &tag, assign, panel)?;
    }
    if let Some(other) = partner.and_then(|p| analysis.assignments.get(&p)) {
        let p = partner.unwrap();
        cross_tab(assign, other, &panel.ids())?.write_csv(out_path(&cfg, &format!("crosstab_{tag}_{p}.csv")))?;
    }

    println!(
        "scheme {tag}: {} clusters, {} idiosyncratic, {} null",
        assign.n_clusters(),
        assign.idiosyncratic().len(),
        assign.null_excluded().len()
    );
    for s in &summary.clusters {
        println!("  {:>2} {:<12} members {:>3}  mean slope {:.4}  sd {:.4}", s.cluster, s.name, s.members, s.mean, s.sd);
    }
    println!("wrote {}", cfg.out.display());
    Ok(())
}

/// Country count and summed area per zone and cluster: stacked-area input.
fn write_zone_area(cfg: &RunConfig, tag: &str, assign: &ClusterAssignment, panel: &TemperaturePanel) -> Result<(), CliError> {
    let mut cells: BTreeMap<(String, String), (usize, f64, bool)> = BTreeMap::new();
    for meta in panel.countries() {
        let zone = meta.zone.map(|z| z.name().to_string()).unwrap_or_else(|| "unknown".into());
        let (_, name) = membership_label(assign, &meta.id);
        let cell = cells.entry((zone, name)).or_insert((0, 0.0, true));
        cell.0 += 1;
        match meta.area {
            Some(a) => cell.1 += a,
            None => cell.2 = false,
        }
    }
    let path = out_path(cfg, &format!("cluster_{tag}_zone_area.csv"));
    let mut w = csv_writer(&path)?;
    csv_row(&mut w, &path, ["zone", "cluster", "countries", "area"])?;
    for ((zone, name), (n, area, complete)) in cells {
        let area = if complete { area.to_string() } else { String::new() };
        csv_row(&mut w, &path, [zone, name, n.to_string(), area])?;
    }
    finish(w, &path)
}

pub fn distances(cfg: &RunConfig, metric: Metric) -> Result<(), CliError> {
    let inputs = load(cfg)?;
    let analysis = Analysis::prepare(&inputs.panel, cfg.pipeline)?;
    let dist = match metric {
        Metric::Slope => &analysis.slope_all,
        Metric::Diff => &analysis.diff,
        Metric::Hamming => &analysis.hamming,
    };
    let path = out_path(cfg, &format!("distance_{metric}.csv"));
    dist.write_csv(&path)?;
    println!("{} distances over {} countries, max {:.4}", metric, dist.len(), dist.max_distance());
    println!("wrote {}", path.display());
    Ok(())
}

/// Features plus the one clustering `kind` needs.
fn analysis_for(panel: &TemperaturePanel, cfg: &RunConfig, kind: WeightKind) -> Result<Analysis, CliError> {
    let mut analysis = Analysis::prepare(panel, cfg.pipeline)?;
    if let (true, Some(scheme)) = (kind.is_cluster_restricted(), kind.scheme()) {
        analysis.cluster(scheme)?;
    }
    Ok(analysis)
}

pub fn weights(cfg: &RunConfig, kind: WeightKind) -> Result<(), CliError> {
    let inputs = load(cfg)?;
    let analysis = analysis_for(&inputs.panel, cfg, kind)?;
    let w = analysis.weights(kind, &inputs.panel, inputs.adjacency.as_ref())?;
    let code = kind.code();
    w.write_csv(out_path(cfg, &format!("weights_{code}.csv")))?;
    write_text(&out_path(cfg, &format!("weights_{code}.json")), &w.meta_json()?)?;
    println!("{}: {} x {}, {} zero rows", kind.model_name(), w.len(), w.len(), w.meta().zero_rows);
    println!("wrote {}", cfg.out.display());
    Ok(())
}

pub fn fit(cfg: &RunConfig, kind: WeightKind) -> Result<(), CliError> {
    let inputs = load(cfg)?;
    let panel = &inputs.panel;
    let analysis = analysis_for(panel, cfg, kind)?;
    let w = analysis.weights(kind, panel, inputs.adjacency.as_ref())?;
    let (score, model) = in_sample(panel, &[w])?.pop().unwrap();
    let code = kind.code();
    model.write_coefficients_csv(out_path(cfg, &format!("coefficients_{code}.csv")))?;
    fitted_levels(&model, panel)?.write_csv(out_path(cfg, &format!("fitted_{code}.csv")))?;
    let unstable = model.nonstationary();
    if !unstable.is_empty() {
        let shown: Vec<&str> = unstable.iter().take(5).copied().collect();
        let more = if unstable.len() > 5 { ", ..." } else { "" };
        println!(
            "warning: {} equations with |phi| + |psi| >= 1 ({}{more})",
            unstable.len(),
            shown.join(", ")
        );
    }
    println!("{} in-sample FN {:.4}", kind.model_name(), score.fn_loss);
    println!("wrote {}", cfg.out.display());
    Ok(())
}

pub fn forecast(cfg: &RunConfig, kind: WeightKind) -> Result<(), CliError> {
    let inputs = load(cfg)?;
    let panel = &inputs.panel;
    let origin = cfg.evaluation.origin;
    let horizon = cfg.evaluation.horizon;
    if origin < panel.first_year() + 3 || origin > panel.last_year() {
        return Err(CliError::config(format!(
            "origin {origin} must lie in {}..={}",
            panel.first_year() + 3,
            panel.last_year()
        )));
    }
    let (train, test) = if origin == panel.last_year() {
        (panel.clone(), None)
    } else {
        let (a, b) = split_panel(panel, origin)?;
        (a, Some(b))
    };
    let source = match cfg.pipeline.weights_from {
        WeightSource::Full => panel,
        WeightSource::Train => &train,
    };
    let analysis = analysis_for(source, cfg, kind)?;
    let w = analysis.weights(kind, &train, inputs.adjacency.as_ref())?;
    let model = fit_star(&train, &w)?;
    let fc = star_forecast(&model, &train, horizon)?;
    let path = out_path(cfg, &format!("forecast_{}_{origin}_{horizon}.csv", kind.code()));
    fc.write_csv(&path)?;
    if let Some(test) = test.filter(|t| t.n_years() >= horizon) {
        let observed = test.slice_years(0, horizon)?.matrix();
        println!("{} FN over {horizon} years after {origin}: {:.4}", kind.model_name(), frobenius_norm(&observed, &fc.levels)?);
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn print_report(report: &McsReport) {
    println!("confidence set ({}, alpha {}):", report.statistic, report.alpha);
    for step in &report.steps {
        println!("  {:<10} p = {:.3}", step.model, step.p_value);
    }
    println!("  survivors: {}", report.survivors.join(", "));
    for w in &report.warnings {
        println!("  warning: {w}");
    }
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let inputs = load(cfg)?;
    check_window(cfg, &inputs.panel)?;
    let report = climstar::pipeline::evaluate(&inputs.panel, inputs.adjacency.as_ref(), cfg.pipeline, &cfg.evaluation)?;
    write_text(&out_path(cfg, "evaluation.json"), &report.to_json()?)?;
    report.write_csv(out_path(cfg, "evaluation.csv"))?;
    println!("in-sample FN:");
    for m in &report.in_sample {
        println!("  {:<10} {:.1}", m.model, m.fn_loss);
    }
    println!("out-of-sample FN ({} + {} years):", report.origin, report.horizon);
    for m in &report.out_of_sample {
        println!("  {:<10} {:.1}", m.model, m.fn_loss);
    }
    print_report(&report.mcs);
    println!("wrote {}", cfg.out.display());
    Ok(())
}

fn check_window(cfg: &RunConfig, panel: &TemperaturePanel) -> Result<(), CliError> {
    let (origin, horizon) = (cfg.evaluation.origin, cfg.evaluation.horizon);
    if origin < panel.first_year() + 3 || origin + horizon as i32 > panel.last_year() {
        return Err(CliError::config(format!(
            "origin {origin} with horizon {horizon} does not fit in {}..={}",
            panel.first_year(),
            panel.last_year()
        )));
    }
    Ok(())
}

fn read_losses(path: &Path) -> Result<Vec<LossSeries>, CliError> {
    let bad = |m: String| CliError::config(format!("{}: {m}", path.display()));
    if !path.is_file() {
        return Err(bad("file not found".into()));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| bad(format!("missing column {name:?}")))
    };
    let (mc, lc) = (col("model")?, col("loss")?);
    let mut series: Vec<LossSeries> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let model = rec.get(mc).unwrap_or("").trim();
        let loss: f64 = rec
            .get(lc)
            .unwrap_or("")
            .trim()
            .parse()
            .map_err(|_| bad(format!("line {}: non-numeric loss", line + 2)))?;
        match series.iter_mut().find(|s| s.model == model) {
            Some(s) => s.losses.push(loss),
            None => series.push(LossSeries {
                model: model.to_string(),
                losses: vec![loss],
            }),
        }
    }
    Ok(series)
}

fn write_losses(path: &Path, series: &[LossSeries]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    csv_row(&mut w, path, ["model", "period", "loss"])?;
    for s in series {
        for (t, v) in s.losses.iter().enumerate() {
            csv_row(&mut w, path, [s.model.clone(), (t + 1).to_string(), v.to_string()])?;
        }
    }
    finish(w, path)
}

pub fn mcs(cfg: &RunConfig, losses: Option<&Path>) -> Result<(), CliError> {
    let series = match losses {
        Some(path) => {
            cfg.evaluation.mcs.validate()?;
            let series = read_losses(path)?;
            std::fs::create_dir_all(&cfg.out)
                .map_err(|e| CliError::config(format!("cannot create {}: {e}", cfg.out.display())))?;
            series
        }
        None => {
            let inputs = load(cfg)?;
            check_window(cfg, &inputs.panel)?;
            let panel = &inputs.panel;
            let source = match cfg.pipeline.weights_from {
                WeightSource::Full => panel.clone(),
                WeightSource::Train => split_panel(panel, cfg.evaluation.origin)?.0,
            };
            let weights = Analysis::run(&source, cfg.pipeline)?.all_weights(&source, inputs.adjacency.as_ref())?;
            let table = oos_experiment(
                panel,
                &weights,
                cfg.evaluation.origin,
                cfg.evaluation.horizon,
                cfg.evaluation.granularity,
            )?;
            let series = table.loss_series();
            write_losses(&out_path(cfg, "losses.csv"), &series)?;
            series
        }
    };
    let report = run_mcs(&series, &cfg.evaluation.mcs)?;
    write_text(&out_path(cfg, "mcs.json"), &report.to_json()?)?;
    print_report(&report);
    println!("wrote {}", cfg.out.display());
    Ok(())
}
