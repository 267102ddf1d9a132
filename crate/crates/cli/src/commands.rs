//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use recdistill_core::classifier::{
    default_templates, generate_glyph, read_pgm, write_pgm, ClassifierMode, GlyphImage,
    PoseCategory, PoseClassifier,
};
use recdistill_core::distill::{self, ParticleSet, World};
use recdistill_core::metrics;
use recdistill_core::oracle;
use recdistill_core::rectify;

use crate::config::Config;
use crate::output::{header, num, read_table, Table};

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn rectify_demo(cfg: &Config, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let m = cfg.mixture()?;
    let sched = cfg.schedule()?;
    let k = m.num_categories();
    let target = cfg.target(k)?;
    let demo = &cfg.demo;
    let d = m.dim();
    if !(1..=2).contains(&d) {
        bail!("rectify-demo supports 1- and 2-dimensional mixtures, got {d}");
    }
    for &t in &demo.times {
        sched.check_step(t)?;
    }
    let lo = vec![demo.grid_min; d];
    let hi = vec![demo.grid_max; d];

    let mut prior_mass = Vec::with_capacity(k);
    let mut rect_mass = Vec::with_capacity(k);
    for c in 0..k {
        let p = oracle::grid_integrate(
            |x: &[f64]| m.density(x).unwrap_or(f64::NAN) * m.clean().category_posterior(x)[c],
            &lo,
            &hi,
            demo.points,
        )?;
        let r = oracle::grid_integrate(
            |x: &[f64]| rectify::rectified_joint(&m, &target, x).map_or(f64::NAN, |j| j[c]),
            &lo,
            &hi,
            demo.points,
        )?;
        prior_mass.push(p.value);
        rect_mass.push(r.value);
    }
    let total: f64 = rect_mass.iter().sum();
    let rect_norm: Vec<f64> = rect_mass.iter().map(|v| v / total).collect();
    let tv = metrics::marginal_tv(&rect_norm, target.probs())?;

    let mut t = Table::create(
        &out.join("marginal.csv"),
        &header(&["category", "prior", "rectified", "target"]),
    )?;
    for c in 0..k {
        t.row(&[
            c.to_string(),
            num(prior_mass[c]),
            num(rect_mass[c]),
            num(target.probs()[c]),
        ])?;
    }
    t.finish()?;

    let grid = oracle::linspace(demo.grid_min, demo.grid_max, demo.points);
    let mut cols: Vec<String> = if d == 1 {
        header(&["x", "p", "p_rect"])
    } else {
        header(&["x0", "x1", "p", "p_rect"])
    };
    for &ts in &demo.times {
        cols.push(format!("p_t{ts}"));
        cols.push(format!("p_rect_t{ts}"));
        if d == 1 {
            cols.push(format!("p_rect_t{ts}_oracle"));
        }
    }
    let points: Vec<Vec<f64>> = if d == 1 {
        grid.iter().map(|&x| vec![x]).collect()
    } else {
        grid.iter()
            .flat_map(|&a| grid.iter().map(move |&b| vec![a, b]))
            .collect()
    };
    let clean_rect: Vec<f64> = points
        .iter()
        .map(|x| rectify::rectified_density(&m, &target, x))
        .collect::<Result<_, _>>()?;
    let mut max_rel = vec![0.0f64; demo.times.len()];
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (j, &ts) in demo.times.iter().enumerate() {
        let pt: Vec<f64> = points
            .iter()
            .map(|x| m.noisy_density(&sched, ts, x))
            .collect::<Result<_, _>>()?;
        let prt: Vec<f64> = points
            .iter()
            .map(|x| rectify::rectified_noisy_density(&m, &sched, ts, &target, x))
            .collect::<Result<_, _>>()?;
        columns.push(pt);
        if d == 1 {
            let conv = oracle::convolve_density(&grid, &clean_rect, &sched, ts)?;
            let peak = prt.iter().cloned().fold(0.0, f64::max);
            for (a, b) in prt.iter().zip(&conv) {
                if *a > 1e-3 * peak {
                    max_rel[j] = max_rel[j].max((a - b).abs() / a);
                }
            }
            columns.push(prt);
            columns.push(conv);
        } else {
            columns.push(prt);
        }
    }
    let mut table = Table::create(&out.join("density.csv"), &cols)?;
    for (i, x) in points.iter().enumerate() {
        let mut row: Vec<String> = x.iter().map(|&v| num(v)).collect();
        row.push(num(m.density(x)?));
        row.push(num(clean_rect[i]));
        row.extend(columns.iter().map(|col| num(col[i])));
        table.row(&row)?;
    }
    table.finish()?;

    let mut s = Table::create(&out.join("summary.csv"), &header(&["metric", "value"]))?;
    s.row(&["tv_rectified_target".into(), num(tv)])?;
    s.row(&["rectified_mass".into(), num(total)])?;
    if d == 1 {
        for (j, &ts) in demo.times.iter().enumerate() {
            s.row(&[format!("max_rel_err_t{ts}"), num(max_rel[j])])?;
        }
    }
    s.finish()?;
    println!("rectified marginal TV to target: {tv:.3e}");
    Ok(())
}

pub fn distill(cfg: &Config, seed: Option<u64>, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let world = cfg.world()?;
    let mut dc = cfg.distill_config(&world)?;
    if let Some(s) = seed {
        dc.seed = s;
    }
    let d = world.renderer.dim();
    let center = cfg
        .distill
        .init_center
        .clone()
        .unwrap_or_else(|| vec![0.0; d]);
    if center.len() != d {
        bail!(
            "distill.init_center has {} entries, parameters have {d}",
            center.len()
        );
    }
    let ps = ParticleSet::gaussian(
        cfg.distill.particles,
        &center,
        cfg.distill.init_spread,
        dc.seed,
    )?;
    let report = distill::run(&ps, &world, &dc)?;
    let k = world.prior.num_categories();

    let mut cols = header(&["iter", "particle"]);
    cols.extend((0..d).map(|j| format!("x{j}")));
    let mut t = Table::create(&out.join("particles.csv"), &cols)?;
    for snap in &report.snapshots {
        for (i, p) in snap.particles.iter().enumerate() {
            let mut row = vec![snap.iter.to_string(), i.to_string()];
            row.extend(p.iter().map(|&v| num(v)));
            t.row(&row)?;
        }
    }
    t.finish()?;

    let mut t = Table::create(
        &out.join("ema.csv"),
        &header(&["iter", "interval", "category", "value"]),
    )?;
    for snap in &report.snapshots {
        for (j, v) in snap.marginal.iter().enumerate() {
            for (c, p) in v.iter().enumerate() {
                t.row(&[snap.iter.to_string(), j.to_string(), c.to_string(), num(*p)])?;
            }
        }
    }
    t.finish()?;

    let mut cols = header(&["iter", "t_low", "t_high"]);
    cols.extend((0..k).map(|c| format!("split_{c}")));
    cols.extend(header(&["entropy", "mean_grad_norm"]));
    let mut t = Table::create(&out.join("metrics.csv"), &cols)?;
    for m in &report.metrics {
        let mut row = vec![
            m.iter.to_string(),
            m.t_low.to_string(),
            m.t_high.to_string(),
        ];
        row.extend(m.split.iter().map(|&v| num(v)));
        row.push(num(m.entropy));
        row.push(num(m.mean_grad_norm));
        t.row(&row)?;
    }
    t.finish()?;

    let fin = report.final_metrics();
    let ln_k = (k as f64).ln();
    let mut t = Table::create(&out.join("summary.csv"), &header(&["metric", "value"]))?;
    t.row(&["method".into(), report.method.name().into()])?;
    t.row(&["seed".into(), dc.seed.to_string()])?;
    for (c, v) in fin.split.iter().enumerate() {
        t.row(&[format!("split_{c}"), num(*v)])?;
    }
    t.row(&["entropy".into(), num(fin.entropy)])?;
    t.row(&["entropy_ratio".into(), num(fin.entropy / ln_k)])?;
    t.finish()?;
    let split: Vec<String> = fin.split.iter().map(|v| format!("{v:.3}")).collect();
    println!(
        "{} seed {}: split [{}], entropy {:.4} ({:.3} of ln K)",
        report.method.name(),
        dc.seed,
        split.join(", "),
        fin.entropy,
        fin.entropy / ln_k
    );
    Ok(())
}

fn pgm_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.extension().is_some_and(|e| e == "pgm"));
    files.sort();
    Ok(files)
}

fn load_pgm(path: &Path) -> Result<GlyphImage> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_pgm(std::io::BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn truth_from_name(path: &Path) -> Option<PoseCategory> {
    let stem = path.file_stem()?.to_str()?;
    PoseCategory::from_name(stem.split('_').next()?).ok()
}

pub fn classify(
    cfg: &Config,
    templates: &Path,
    inputs: &Path,
    mode: ClassifierMode,
    out: &Path,
) -> Result<()> {
    let template_images = PoseCategory::ALL
        .iter()
        .map(|c| {
            let p = templates.join(format!("{}.pgm", c.name()));
            if !p.exists() {
                bail!(
                    "template directory {} is missing {}.pgm",
                    templates.display(),
                    c.name()
                );
            }
            load_pgm(&p)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut pc = PoseClassifier::new(&template_images, cfg.classifier.segmenter_seed)?;
    cfg.apply_pose_classifier(&mut pc);
    pc.mode = mode;
    let files = pgm_files(inputs)?;
    if files.is_empty() {
        bail!("no .pgm images in {}", inputs.display());
    }
    let images = files
        .iter()
        .map(|p| load_pgm(p))
        .collect::<Result<Vec<_>>>()?;
    let probs = pc.classify_batch(&images)?;
    ensure_dir(out)?;

    let mut cols = header(&["file"]);
    cols.extend(PoseCategory::ALL.iter().map(|c| format!("p_{}", c.name())));
    cols.extend(header(&["predicted", "truth"]));
    let mut t = Table::create(&out.join("probabilities.csv"), &cols)?;
    let k = PoseCategory::ALL.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (path, p) in files.iter().zip(&probs) {
        let pred = (0..k).fold(0, |b, j| if p[j] > p[b] { j } else { b });
        let truth = truth_from_name(path);
        if let Some(tc) = truth {
            confusion[tc.index()][pred] += 1;
        }
        let mut row = vec![path
            .file_name()
            .map_or(String::new(), |n| n.to_string_lossy().into_owned())];
        row.extend(p.iter().map(|&v| num(v)));
        row.push(PoseCategory::ALL[pred].name().into());
        row.push(truth.map_or(String::new(), |c| c.name().into()));
        t.row(&row)?;
    }
    t.finish()?;

    let mut cols = header(&["truth"]);
    cols.extend(PoseCategory::ALL.iter().map(|c| c.name().to_string()));
    let mut t = Table::create(&out.join("confusion.csv"), &cols)?;
    for (c, row) in PoseCategory::ALL.iter().zip(&confusion) {
        let mut r = vec![c.name().to_string()];
        r.extend(row.iter().map(|v| v.to_string()));
        t.row(&r)?;
    }
    t.finish()?;

    let labeled: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let mut t = Table::create(&out.join("summary.csv"), &header(&["metric", "value"]))?;
    let accuracy = if labeled > 0 {
        correct as f64 / labeled as f64
    } else {
        f64::NAN
    };
    t.row(&["images".into(), images.len().to_string()])?;
    t.row(&["labeled".into(), labeled.to_string()])?;
    t.row(&["accuracy".into(), num(accuracy)])?;
    let mut f1_sum = 0.0;
    for (c, cat) in PoseCategory::ALL.iter().enumerate() {
        let tp = confusion[c][c] as f64;
        let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
        let actual: usize = confusion[c].iter().sum();
        let precision = if predicted > 0 {
            tp / predicted as f64
        } else {
            0.0
        };
        let recall = if actual > 0 { tp / actual as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        f1_sum += f1;
        t.row(&[format!("precision_{}", cat.name()), num(precision)])?;
        t.row(&[format!("recall_{}", cat.name()), num(recall)])?;
        t.row(&[format!("f1_{}", cat.name()), num(f1)])?;
    }
    t.row(&["macro_f1".into(), num(f1_sum / k as f64)])?;
    t.finish()?;
    println!(
        "classified {} images; accuracy {accuracy:.4} on {labeled} labeled",
        images.len()
    );
    Ok(())
}

fn probability_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let (head, rows) = read_table(path)?;
    let cols: Vec<usize> = head
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("p_"))
        .map(|(i, _)| i)
        .collect();
    if cols.is_empty() {
        bail!(
            "{}: no probability columns (headers starting with p_)",
            path.display()
        );
    }
    rows.iter()
        .enumerate()
        .map(|(r, row)| {
            let line = r + 2;
            let p = cols
                .iter()
                .map(|&c| {
                    row.get(c)
                        .and_then(|v| v.trim().parse::<f64>().ok())
                        .with_context(|| {
                            format!(
                                "{}: row {line}: column {} is not a number",
                                path.display(),
                                head[c]
                            )
                        })
                })
                .collect::<Result<Vec<f64>>>()?;
            let s: f64 = p.iter().sum();
            if p.iter().any(|&v| !(v >= 0.0)) || (s - 1.0).abs() > 1e-6 {
                bail!("{}: row {line} is not a probability vector", path.display());
            }
            Ok(p)
        })
        .collect()
}

/// Particles of the last snapshot in a `particles.csv`.
fn final_particles(path: &Path) -> Result<Vec<Vec<f64>>> {
    let (head, rows) = read_table(path)?;
    if head.len() < 3 || head[0] != "iter" || head[1] != "particle" {
        bail!("{}: expected columns iter,particle,x0,...", path.display());
    }
    let mut parsed = Vec::with_capacity(rows.len());
    for (r, row) in rows.iter().enumerate() {
        let line = r + 2;
        let bad = || format!("{}: malformed row {line}", path.display());
        if row.len() != head.len() {
            bail!(bad());
        }
        let iter: usize = row[0].parse().with_context(bad)?;
        let coords = row[2..]
            .iter()
            .map(|v| v.parse::<f64>().with_context(bad))
            .collect::<Result<Vec<_>>>()?;
        parsed.push((iter, coords));
    }
    let last = parsed
        .iter()
        .map(|(i, _)| *i)
        .max()
        .with_context(|| format!("{}: no particle rows", path.display()))?;
    Ok(parsed
        .into_iter()
        .filter(|(i, _)| *i == last)
        .map(|(_, c)| c)
        .collect())
}

fn particle_posteriors(world: &World<f64>, particles: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for theta in particles {
        for pose in 0..world.renderer.num_poses() {
            let x0 = world.renderer.render(theta, pose)?;
            rows.push(world.prior.category_posterior(&world.schedule, 0, &x0)?);
        }
    }
    Ok(rows)
}

pub fn metrics_cmd(
    cfg: Option<&Config>,
    probs: &[PathBuf],
    particles: &[PathBuf],
    reference: Option<&Path>,
    out: &Path,
) -> Result<()> {
    if probs.is_empty() && particles.is_empty() {
        bail!("metrics needs at least one --probs or --particles input");
    }
    ensure_dir(out)?;
    let world = match (cfg, particles.is_empty()) {
        (Some(c), false) => Some(c.world()?),
        (None, false) if reference.is_none() => {
            bail!("--particles needs --config (for posteriors) or --reference")
        }
        _ => None,
    };
    let reference = reference.map(final_particles).transpose()?;
    let mut t = Table::create(
        &out.join("metrics.csv"),
        &header(&["input", "kind", "entropy", "tv_uniform", "frechet"]),
    )?;
    let entropy_cols = |rows: &[Vec<f64>]| -> Result<(String, String)> {
        let rep = metrics::categorical_entropy(rows)?;
        let k = rep.mean_probs.len();
        let uniform = vec![1.0 / k as f64; k];
        Ok((
            num(rep.entropy),
            num(metrics::marginal_tv(&rep.mean_probs, &uniform)?),
        ))
    };
    for p in probs {
        let rows = probability_rows(p)?;
        let (e, tv) = entropy_cols(&rows)?;
        t.row(&[
            p.display().to_string(),
            "probs".into(),
            e,
            tv,
            String::new(),
        ])?;
    }
    for p in particles {
        let pts = final_particles(p)?;
        let (e, tv) = match &world {
            Some(w) => entropy_cols(&particle_posteriors(w, &pts)?)?,
            None => (String::new(), String::new()),
        };
        let fr = match &reference {
            Some(r) => num(metrics::gaussian_frechet(&pts, r)?),
            None => String::new(),
        };
        t.row(&[p.display().to_string(), "particles".into(), e, tv, fr])?;
    }
    t.finish()?;
    Ok(())
}

pub fn glyphs(seed: u64, per_category: usize, out: &Path) -> Result<()> {
    let tdir = out.join("templates");
    let cdir = out.join("corpus");
    ensure_dir(&tdir)?;
    ensure_dir(&cdir)?;
    let write = |path: PathBuf, img: &GlyphImage| -> Result<()> {
        let f = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = std::io::BufWriter::new(f);
        write_pgm(&mut w, img)?;
        std::io::Write::flush(&mut w)?;
        Ok(())
    };
    for (c, img) in PoseCategory::ALL.iter().zip(default_templates()) {
        write(tdir.join(format!("{}.pgm", c.name())), &img)?;
    }
    let mut index = Table::create(
        &out.join("index.csv"),
        &header(&["file", "category", "seed"]),
    )?;
    for c in PoseCategory::ALL {
        for i in 0..per_category {
            let s = seed + i as u64;
            let name = format!("{}_{i:04}.pgm", c.name());
            write(cdir.join(&name), &generate_glyph(c, s))?;
            index.row(&[format!("corpus/{name}"), c.name().into(), s.to_string()])?;
        }
    }
    index.finish()?;
    println!(
        "wrote {} glyphs and 4 templates to {}",
        4 * per_category,
        out.display()
    );
    Ok(())
}
