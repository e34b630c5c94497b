//! Speed-quality sweeps, unmasking-order statistics, exact sequence NLL, and
//! CSV/SVG report emission (no plotting dependencies).

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decode::{ar_decode, diffuse_decode, DecodeConfig, DecodeTrace};
use crate::error::{invalid, Error, Result};
use crate::net::ModelParams;
use crate::rng::RngStream;
use crate::synth::{sample_training_layout, sequence_prob, ProcessSpec};
use crate::vocab::Vocab;

/// Versioned sweep-CSV schema tag, written as a comment header.
pub const SWEEP_SCHEMA: &str = "mdtc.sweep.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// diffusion | ar_cached | ar_uncached
    pub decoder: String,
    pub steps: usize,
    pub target_len: usize,
    /// Exact-match token accuracy against ground truth; only for processes
    /// deterministic given the text.
    pub token_accuracy: Option<f64>,
    /// Mean exact negative log likelihood of the generated target under the
    /// process law.
    pub nll: Option<f64>,
    pub forward_passes: usize,
    pub position_evals: usize,
    pub wall_time_s: f64,
}

/// Spearman rank correlations between position index and unmask step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WavefrontStats {
    pub per_decode: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Traces skipped because rank correlation is undefined (fewer than two
    /// positions or zero variance in steps).
    pub skipped: usize,
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties; `None` when the
/// correlation is undefined.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx <= 0.0 || vy <= 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// Position-vs-unmask-step rank correlation per trace, plus corpus moments.
pub fn wavefront_stats(traces: &[DecodeTrace]) -> Result<WavefrontStats> {
    if traces.is_empty() {
        return Err(invalid("need at least one trace"));
    }
    let mut per_decode = Vec::new();
    let mut skipped = 0usize;
    for trace in traces {
        let xs: Vec<f64> = (0..trace.unmask_step.len()).map(|i| i as f64).collect();
        let ys: Vec<f64> = trace.unmask_step.iter().map(|&s| s as f64).collect();
        match spearman(&xs, &ys) {
            Some(rho) => per_decode.push(rho),
            None => skipped += 1,
        }
    }
    let n = per_decode.len().max(1) as f64;
    let mean = per_decode.iter().sum::<f64>() / n;
    let var = per_decode.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    Ok(WavefrontStats { per_decode, mean, std: var.sqrt(), skipped })
}

/// Exact -ln P of a target-symbol sequence under the process law; infinite
/// for zero-probability sequences.
pub fn nll_under_process(spec: &ProcessSpec, tokens: &[u32]) -> f64 {
    let p = sequence_prob(spec, tokens);
    if p <= 0.0 {
        f64::INFINITY
    } else {
        -p.ln()
    }
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    samples[samples.len() / 2]
}

fn target_symbols(vocab: &Vocab, target_ids: &[u32]) -> Vec<u32> {
    target_ids.iter().filter_map(|&id| vocab.speech_symbol(id)).collect()
}

fn quality_of(
    spec: &ProcessSpec,
    vocab: &Vocab,
    text_syms: &[u32],
    generated_target: &[u32],
) -> (Option<f64>, Option<f64>) {
    let syms = target_symbols(vocab, generated_target);
    let nll = if syms.len() == generated_target.len() {
        Some(nll_under_process(spec, &syms))
    } else {
        Some(f64::INFINITY) // emitted a non-speech id somewhere
    };
    let accuracy = spec.expand_text(text_syms).map(|truth| {
        let hits = truth
            .iter()
            .zip(generated_target.iter())
            .filter(|(t, g)| vocab.speech_id(**t) == **g)
            .count();
        hits as f64 / truth.len() as f64
    });
    (accuracy, nll)
}

/// Decodes `n_eval` fresh layouts per step count and scores quality, cost,
/// and single-threaded wall time (median over the evaluation decodes, after
/// a warm-up). AR baselines (cached and uncached) are measured once each.
pub fn speed_quality_sweep(
    params: &ModelParams,
    spec: &ProcessSpec,
    vocab: &Vocab,
    prompt_len: usize,
    step_grid: &[usize],
    n_eval: usize,
    base: &DecodeConfig,
    rng: &mut RngStream,
) -> Result<Vec<SweepRow>> {
    if step_grid.is_empty() || n_eval == 0 {
        return Err(invalid("empty sweep"));
    }
    let mut rows = Vec::new();
    let mut layout_rng = rng.split("sweep-layouts");

    // fixed evaluation set shared by every decoder and step count
    let mut examples = Vec::with_capacity(n_eval);
    for _ in 0..n_eval {
        examples.push(sample_training_layout(spec, vocab, prompt_len, &mut layout_rng)?);
    }
    let masked_layouts: Vec<_> = examples
        .iter()
        .map(|ex| {
            let masked = vec![vocab.mask_id; ex.layout.target_len()];
            ex.layout.with_target(&masked).unwrap()
        })
        .collect();

    // warm-up pass
    let warm_cfg = DecodeConfig { steps: 2, ..*base };
    let _ = diffuse_decode(params, &masked_layouts[0], &warm_cfg, &rng.split("warmup"))?;

    for &steps in step_grid {
        let cfg = DecodeConfig { steps, ..*base };
        let decode_rng = rng.split(&format!("diffusion-{steps}"));
        let mut times = Vec::with_capacity(n_eval);
        let mut acc_sum = 0.0;
        let mut acc_n = 0usize;
        let mut nll_sum = 0.0;
        let mut nll_n = 0usize;
        let mut passes = 0;
        let mut evals = 0;
        for (i, (ex, masked)) in examples.iter().zip(&masked_layouts).enumerate() {
            let (tokens, trace) =
                diffuse_decode(params, masked, &cfg, &decode_rng.split_u64(i as u64))?;
            let generated = &tokens[masked.target_span.range()];
            let (acc, nll) = quality_of(spec, vocab, &ex.text_syms, generated);
            if let Some(a) = acc {
                acc_sum += a;
                acc_n += 1;
            }
            if let Some(l) = nll {
                nll_sum += l;
                nll_n += 1;
            }
            times.push(trace.wall_time_s);
            passes = trace.forward_pass_count;
            evals = trace.position_evals;
        }
        rows.push(SweepRow {
            decoder: "diffusion".into(),
            steps,
            target_len: masked_layouts[0].target_len(),
            token_accuracy: (acc_n > 0).then(|| acc_sum / acc_n as f64),
            nll: (nll_n > 0).then(|| nll_sum / nll_n as f64),
            forward_passes: passes,
            position_evals: evals,
            wall_time_s: median(&mut times),
        });
    }

    for (tag, cached) in [("ar_cached", true), ("ar_uncached", false)] {
        let decode_rng = rng.split(tag);
        let mut times = Vec::with_capacity(n_eval);
        let mut acc_sum = 0.0;
        let mut acc_n = 0usize;
        let mut nll_sum = 0.0;
        let mut nll_n = 0usize;
        let mut passes = 0;
        let mut evals = 0;
        for (i, (ex, masked)) in examples.iter().zip(&masked_layouts).enumerate() {
            let (tokens, trace) = ar_decode(
                params,
                masked,
                cached,
                base.sample_temperature,
                base.top_p,
                &decode_rng.split_u64(i as u64),
            )?;
            let generated = &tokens[masked.target_span.range()];
            let (acc, nll) = quality_of(spec, vocab, &ex.text_syms, generated);
            if let Some(a) = acc {
                acc_sum += a;
                acc_n += 1;
            }
            if let Some(l) = nll {
                nll_sum += l;
                nll_n += 1;
            }
            times.push(trace.wall_time_s);
            passes = trace.forward_pass_count;
            evals = trace.position_evals;
        }
        rows.push(SweepRow {
            decoder: tag.into(),
            steps: masked_layouts[0].target_len(),
            target_len: masked_layouts[0].target_len(),
            token_accuracy: (acc_n > 0).then(|| acc_sum / acc_n as f64),
            nll: (nll_n > 0).then(|| nll_sum / nll_n as f64),
            forward_passes: passes,
            position_evals: evals,
            wall_time_s: median(&mut times),
        });
    }
    Ok(rows)
}

fn fmt_opt(x: Option<f64>) -> String {
    match x {
        Some(v) if v.is_finite() => format!("{v:.9}"),
        Some(_) => "inf".into(),
        None => String::new(),
    }
}

/// Sweep rows as CSV with the versioned schema header. Quality metric
/// definitions are stated in the header comments.
pub fn sweep_csv(rows: &[SweepRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(invalid("no rows to emit"));
    }
    let mut out = String::new();
    let _ = writeln!(out, "# schema: {SWEEP_SCHEMA}");
    let _ = writeln!(
        out,
        "# token_accuracy: exact-match fraction vs ground truth (deterministic specs); \
         nll: exact -ln P of the generated target under the process law"
    );
    let _ = writeln!(
        out,
        "decoder,steps,target_len,token_accuracy,nll,forward_passes,position_evals,wall_time_s"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{:.9}",
            r.decoder,
            r.steps,
            r.target_len,
            fmt_opt(r.token_accuracy),
            fmt_opt(r.nll),
            r.forward_passes,
            r.position_evals,
            r.wall_time_s
        );
    }
    Ok(out)
}

pub fn emit_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let text = sweep_csv(rows)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Parses CSV produced by [`emit_csv`] (comments skipped).
pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    let mut saw_header = false;
    for line in text.lines() {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        if !saw_header {
            if !line.starts_with("decoder,") {
                return Err(Error::Format("missing sweep header".into()));
            }
            saw_header = true;
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 8 {
            return Err(Error::Format(format!("bad sweep row: {line}")));
        }
        let parse_opt = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else if s == "inf" {
                Ok(Some(f64::INFINITY))
            } else {
                s.parse::<f64>().map(Some).map_err(|e| Error::Format(e.to_string()))
            }
        };
        let parse_num = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Format(format!("bad integer {s}")))
        };
        rows.push(SweepRow {
            decoder: parts[0].to_string(),
            steps: parse_num(parts[1])?,
            target_len: parse_num(parts[2])?,
            token_accuracy: parse_opt(parts[3])?,
            nll: parse_opt(parts[4])?,
            forward_passes: parse_num(parts[5])?,
            position_evals: parse_num(parts[6])?,
            wall_time_s: parts[7].parse().map_err(|e: std::num::ParseFloatError| {
                Error::Format(e.to_string())
            })?,
        });
    }
    if !saw_header {
        return Err(Error::Format("missing sweep header".into()));
    }
    Ok(rows)
}

/// One named polyline for the SVG plot.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct AxesSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Minimal line plot: axes, tick labels, legend, one polyline per series.
pub fn svg_plot(series: &[Series], axes: &AxesSpec) -> Result<String> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(invalid("nothing to plot"));
    }
    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 50.0);
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let mut ymin = f64::INFINITY;
    let mut ymax = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            if !x.is_finite() || !y.is_finite() {
                continue;
            }
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
    }
    if !xmin.is_finite() || !ymin.is_finite() {
        return Err(invalid("no finite points to plot"));
    }
    if (xmax - xmin).abs() < 1e-12 {
        xmax = xmin + 1.0;
    }
    if (ymax - ymin).abs() < 1e-12 {
        ymax = ymin + 1.0;
    }
    let sx = |x: f64| ml + (x - xmin) / (xmax - xmin) * (w - ml - mr);
    let sy = |y: f64| h - mb - (y - ymin) / (ymax - ymin) * (h - mt - mb);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        w / 2.0,
        xml_escape(&axes.title)
    );
    // axes
    let _ = writeln!(
        out,
        r#"<line x1="{ml}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        h - mb,
        w - mr,
        h - mb
    );
    let _ = writeln!(out, r#"<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{}" stroke="black"/>"#, h - mb);
    for k in 0..=4 {
        let fx = xmin + (xmax - xmin) * k as f64 / 4.0;
        let fy = ymin + (ymax - ymin) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="11">{:.3}</text>"#,
            sx(fx),
            h - mb + 16.0,
            fx
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="11">{:.3}</text>"#,
            ml - 6.0,
            sy(fy) + 4.0,
            fy
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#,
        (ml + w - mr) / 2.0,
        h - 12.0,
        xml_escape(&axes.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" font-size="13" transform="rotate(-90 16 {})">{}</text>"#,
        (mt + h - mb) / 2.0,
        (mt + h - mb) / 2.0,
        xml_escape(&axes.y_label)
    );
    for (si, s) in series.iter().enumerate() {
        let color = colors[si % colors.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = mt + 18.0 * si as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            w - mr - 130.0,
            w - mr - 110.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="12">{}</text>"#,
            w - mr - 104.0,
            ly + 4.0,
            xml_escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn emit_svg_plot(series: &[Series], axes: &AxesSpec, path: &Path) -> Result<()> {
    let text = svg_plot(series, axes)?;
    std::fs::write(path, text)?;
    Ok(())
}
