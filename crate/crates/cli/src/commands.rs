use std::fs;
use std::path::{Path, PathBuf};

use msvine::bayes_mcmc::{
    dic as dic_of, effective_sample_size, gibbs_run, state_probabilities, subsample, summarize, tau_chains,
    trans_chains, write_chain_csvs, ChainConfig, IdentStat, PosteriorDraw, PriorSpec,
};
use msvine::ms_em::{em_fit, initialize, EmOptions};
use msvine::regime_chain::{moving_average, write_probabilities_csv};
use msvine::structure_select::{rolling_window, select_structure, Candidate, SelectOptions};
use msvine::{scenarios, CopulaData, CopulaFamily, Error, MsRVineModel, RVineSpec};
use serde_json::json;

use crate::{
    DicArgs, Failure, FitBayesArgs, FitEmArgs, ReportArgs, RollingArgs, Selection, SelectArgs, SimulateArgs,
};

type Res<T = ()> = Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> Res<T> {
    Err(Failure::Usage(msg.into()))
}

pub fn load_model(path: &Path) -> Res<MsRVineModel> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_model(path: &Path, model: &MsRVineModel) -> Res {
    let mut text = serde_json::to_string_pretty(model)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn out_dir(path: &Path) -> Res<PathBuf> {
    fs::create_dir_all(path)?;
    Ok(path.to_path_buf())
}

fn read_data(path: &Path) -> Res<CopulaData> {
    Ok(CopulaData::read_csv(path)?)
}

fn check_dim(model_dim: usize, data: &CopulaData) -> Res {
    if model_dim != data.dim() {
        return Err(Error::Dimension {
            expected: model_dim,
            found: data.dim(),
        }
        .into());
    }
    Ok(())
}

fn parse_families(list: &str) -> Res<Vec<CopulaFamily>> {
    if list.trim() == "all" {
        return Ok(CopulaFamily::ALL.to_vec());
    }
    let fams = list
        .split(',')
        .map(|t| t.trim().parse::<CopulaFamily>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    if fams.is_empty() {
        return usage("empty catalogue");
    }
    Ok(fams)
}

fn select_options(sel: &Selection) -> Res<SelectOptions> {
    let mut opts = SelectOptions::default();
    if !sel.catalogue.is_empty() {
        opts.catalogues = sel.catalogue.iter().map(|c| parse_families(c)).collect::<Res<_>>()?;
    }
    opts.trunc = sel.trunc;
    opts.independence_test = !sel.no_indep_test;
    Ok(opts)
}

pub fn simulate(a: SimulateArgs) -> Res {
    let model = match (&a.model, a.scenario) {
        (Some(path), _) => load_model(path)?,
        (None, Some(k)) => scenarios::scenario(k).map_err(|e| Failure::Usage(e.to_string()))?,
        (None, None) => return usage("either --model or --scenario is required"),
    };
    let dir = out_dir(&a.out)?;
    let (data, states) = model.simulate(a.length, a.seed)?;
    data.write_csv(dir.join("data.csv"))?;
    let mut w = csv::Writer::from_path(dir.join("states.csv"))?;
    w.write_record(["t", "regime"])?;
    for (t, s) in states.iter().enumerate() {
        w.write_record([(t + 1).to_string(), (s + 1).to_string()])?;
    }
    w.flush()?;
    save_model(&dir.join("model.json"), &model)?;
    println!("simulated {} rows of dimension {}", data.len(), data.dim());
    Ok(())
}

pub fn select(a: SelectArgs) -> Res {
    let data = read_data(&a.data)?;
    let opts = select_options(&a.selection)?;
    let spec = select_structure(&data, &opts, None)?;
    let dir = out_dir(&a.out)?;
    let ll = spec.loglik(&data)?;
    save_model(&dir.join("model.json"), &MsRVineModel::single(spec.clone()))?;
    println!(
        "selected {} active edges, loglik {ll:.4}",
        spec.active_edges().len()
    );
    Ok(())
}

pub fn fit_em(a: FitEmArgs) -> Res {
    let data = read_data(&a.data)?;
    let templates: Vec<RVineSpec> = if a.model.is_empty() {
        let p = a.regimes.unwrap_or(2);
        if p == 0 {
            return usage("--regimes must be at least 1");
        }
        let spec = select_structure(&data, &select_options(&a.selection)?, None)?;
        vec![spec; p]
    } else {
        let mut t = Vec::new();
        for path in &a.model {
            t.extend(load_model(path)?.regimes().iter().cloned());
        }
        if a.regimes.is_some_and(|p| p != t.len()) {
            return usage(format!("--regimes disagrees with the {} regimes in the model files", t.len()));
        }
        t
    };
    for t in &templates {
        check_dim(t.dim(), &data)?;
    }
    if a.iters == 0 {
        return usage("--iters must be positive");
    }
    let init = initialize(&templates, &data)?;
    let (model, trace) = em_fit(
        &init,
        &data,
        EmOptions {
            tol: a.tol,
            max_iter: a.iters,
        },
    )?;
    let dir = out_dir(&a.out)?;
    save_model(&dir.join("model.json"), &model)?;
    write_probabilities_csv(dir.join("smoothed.csv"), &trace.smoothed)?;
    let label = |v: &[(usize, usize)], k: usize| -> Vec<String> {
        v.iter().map(|&(r, c)| model.regime(k).matrix().edge_label(r, c)).collect()
    };
    let fits: Vec<_> = trace
        .fits
        .iter()
        .enumerate()
        .map(|(k, f)| {
            json!({
                "regime": k + 1,
                "fallback_edges": label(&f.fallback_edges, k),
                "boundary_edges": label(&f.boundary_edges, k),
            })
        })
        .collect();
    let log = json!({
        "logliks": trace.logliks,
        "iterations": trace.iterations,
        "converged": trace.converged,
        "best_iteration": trace.best_iteration + 1,
        "loglik": trace.logliks[trace.best_iteration],
        "fits": fits,
    });
    fs::write(dir.join("trace.json"), serde_json::to_string_pretty(&log)? + "\n")?;
    if !trace.converged {
        eprintln!("warning: EM did not converge within {} iterations", trace.iterations);
    }
    println!(
        "EM: {} iterations, loglik {:.4}, converged {}",
        trace.iterations, trace.logliks[trace.best_iteration], trace.converged
    );
    Ok(())
}

fn min_ess(draws: &[PosteriorDraw]) -> Res<Option<f64>> {
    let p = draws.first().map_or(0, |d| d.model.num_regimes());
    let mut cols: Vec<Vec<f64>> = (0..p).flat_map(|k| tau_chains(draws, k)).map(|(_, v)| v).collect();
    if p > 1 {
        cols.extend(trans_chains(draws).into_iter().map(|(_, v)| v));
    }
    let mut best: Option<f64> = None;
    for c in &cols {
        let e = effective_sample_size(c)?;
        if !e.degenerate {
            best = Some(best.map_or(e.ess, |b| b.min(e.ess)));
        }
    }
    Ok(best)
}

pub fn fit_bayes(a: FitBayesArgs) -> Res {
    if a.iters <= a.burnin {
        return usage("iterations must exceed burnin");
    }
    if a.thin == 0 {
        return usage("--thin must be at least 1");
    }
    let ident: IdentStat = a.ident_stat.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let data = read_data(&a.data)?;
    let model = load_model(&a.model)?;
    check_dim(model.dim(), &data)?;
    let mut cfg = ChainConfig::new(a.iters, a.burnin, a.thin, a.seed);
    cfg.ident = ident;
    cfg.checkpoint = a.checkpoint.clone();
    let mut out = gibbs_run(&model, &data, &cfg, &PriorSpec::flat(model.num_regimes()))?;
    let thinned = out.draws.len();
    let ess_thinned = min_ess(&out.draws)?;
    out.draws = subsample(std::mem::take(&mut out.draws), a.keep);
    let ess_kept = min_ess(&out.draws)?;
    let dic = if out.draws.len() >= 100 {
        Some(dic_of(&out.draws, &data)?)
    } else {
        None
    };
    let summary = summarize(&out, dic)?;
    let dir = out_dir(&a.out)?;
    write_chain_csvs(&dir, &out.draws)?;
    write_probabilities_csv(
        dir.join("probs.csv"),
        &state_probabilities(&out.draws, model.num_regimes()),
    )?;
    fs::write(dir.join("draws.json"), serde_json::to_string(&out.draws)?)?;
    let doc = json!({
        "seed": a.seed,
        "iterations": a.iters,
        "burnin": a.burnin,
        "thin": a.thin,
        "thinned_draws": thinned,
        "kept_draws": out.draws.len(),
        "min_ess_thinned": ess_thinned,
        "min_ess_kept": ess_kept,
        "all_rejected_sweeps": out.all_rejected_sweeps,
        "summary": summary,
    });
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&doc)? + "\n")?;
    println!(
        "kept {} of {} thinned draws, min ESS {}",
        out.draws.len(),
        thinned,
        ess_kept.map_or("n/a".to_string(), |e| format!("{e:.0}"))
    );
    Ok(())
}

fn parse_candidate(s: &str) -> Res<Candidate> {
    let Some((name, rest)) = s.split_once('=') else {
        return usage(format!("candidate {s:?} is not of the form name=TAGS[:TRUNC]"));
    };
    let (tags, trunc) = match rest.rsplit_once(':') {
        Some((tags, t)) => {
            let t = t
                .parse::<usize>()
                .map_err(|_| Failure::Usage(format!("bad truncation level {t:?}")))?;
            (tags, Some(t))
        }
        None => (rest, None),
    };
    let mut options = SelectOptions::new(parse_families(tags)?);
    options.trunc = trunc;
    Ok(Candidate {
        name: name.trim().to_string(),
        options,
    })
}

pub fn rolling(a: RollingArgs) -> Res {
    let data = read_data(&a.data)?;
    let candidates: Vec<Candidate> = if a.candidate.is_empty() {
        vec![Candidate {
            name: "selected".into(),
            options: select_options(&a.selection)?,
        }]
    } else {
        let mut c = a.candidate.iter().map(|s| parse_candidate(s)).collect::<Res<Vec<_>>>()?;
        for cand in &mut c {
            cand.options.independence_test = !a.selection.no_indep_test;
        }
        c
    };
    let report = rolling_window(&data, a.window, &candidates)?;
    let dir = out_dir(&a.out)?;
    report.write_csv(dir.join("rolling.csv"))?;
    for (w, c, msg) in &report.failures {
        eprintln!(
            "warning: window starting at {} ({}): {msg}",
            report.starts[*w] + 1,
            report.names[*c]
        );
    }
    println!("{} windows of {} rows", report.starts.len(), report.window);
    for (c, name) in report.names.iter().enumerate() {
        println!("{name}: mean loglik {:.4}", report.mean_loglik(c));
    }
    Ok(())
}

pub fn dic(a: DicArgs) -> Res {
    let data = read_data(&a.data)?;
    let mut rows = Vec::new();
    for path in &a.model {
        let (file, name) = if path.is_dir() {
            (path.join("draws.json"), path.file_name())
        } else {
            (path.clone(), path.parent().and_then(Path::file_name))
        };
        let name = name.map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        let draws: Vec<PosteriorDraw> = serde_json::from_str(&fs::read_to_string(&file)?)?;
        let Some(first) = draws.first() else {
            return Err(Error::InvalidInput(format!("{} holds no draws", file.display())).into());
        };
        check_dim(first.model.dim(), &data)?;
        rows.push((name, dic_of(&draws, &data)?));
    }
    rows.sort_by(|x, y| x.1.dic.total_cmp(&y.1.dic));
    let dir = out_dir(&a.out)?;
    let mut w = csv::Writer::from_path(dir.join("dic.csv"))?;
    w.write_record(["model", "dic", "p_d", "mean_deviance", "projected"])?;
    for (name, r) in &rows {
        w.write_record([
            name.clone(),
            r.dic.to_string(),
            r.p_d.to_string(),
            r.mean_deviance.to_string(),
            r.projected.to_string(),
        ])?;
        println!("{name}: DIC {:.3} (p_D {:.3})", r.dic, r.p_d);
    }
    w.flush()?;
    Ok(())
}

pub fn report(a: ReportArgs) -> Res {
    if a.window == 0 {
        return usage("--window must be at least 1");
    }
    let data = read_data(&a.data)?;
    let model = load_model(&a.model)?;
    check_dim(model.dim(), &data)?;
    let (sm, ll) = msvine::ms_em::smooth(&model, &data)?;
    let dir = out_dir(&a.out)?;
    write_probabilities_csv(dir.join("smoothed.csv"), &sm.smoothed)?;
    write_probabilities_csv(dir.join("smoothed_ma.csv"), &moving_average(&sm.smoothed, a.window))?;
    let mut w = csv::Writer::from_path(dir.join("edges.csv"))?;
    w.write_record(["regime", "tree", "edge", "family", "par1", "par2", "tau"])?;
    for (k, spec) in model.regimes().iter().enumerate() {
        for (r, c) in spec.edges() {
            let pc = spec.copula(r, c);
            let par = |i: usize| pc.params().get(i).map_or(String::new(), |v| v.to_string());
            w.write_record([
                (k + 1).to_string(),
                spec.matrix().tree_of_row(r).to_string(),
                spec.matrix().edge_label(r, c),
                pc.family().to_string(),
                par(0),
                par(1),
                pc.tau().to_string(),
            ])?;
        }
    }
    w.flush()?;
    println!("loglik {ll:.4}, {} rows", data.len());
    Ok(())
}
