//! CSV files exchanged by the command-line tools.
//!
//! Every file has a mandatory header. Schema violations are reported as
//! [`NndpError::Schema`] with the 1-based line of the offending record.
//! Layouts are described in `docs/formats.md`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use csv::{ReaderBuilder, StringRecord, Trim, WriterBuilder};

use crate::error::{NndpError, Result};
use crate::kernel::{Direction, Smoothness};
use crate::neighbors::{Points, ReferenceSet};
use crate::nndp::GradientField;
use crate::posterior::{Chain, PosteriorDraw};

/// Observations with optional true gradients along the canonical axes.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    pub points: Points,
    pub y: Vec<f64>,
    /// `truth[a][i]` is the true gradient of row `i` along axis `a`.
    pub truth: Option<Vec<Vec<f64>>>,
}

/// One row of a gradient file.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientRow {
    pub point: Vec<f64>,
    pub direction: String,
    pub estimate: f64,
    pub sd: f64,
    pub n_samples: usize,
}

fn csv_error(e: csv::Error) -> NndpError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => NndpError::Io(io),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
            NndpError::schema(line, format!("expected {expected_len} fields, found {len}"))
        }
        csv::ErrorKind::Utf8 { err, .. } => NndpError::schema(line, format!("invalid UTF-8: {err}")),
        other => NndpError::schema(line, format!("{other:?}")),
    }
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    ReaderBuilder::new().trim(Trim::All).comment(Some(b'#')).from_reader(r)
}

fn header<R: Read>(rd: &mut csv::Reader<R>) -> Result<Vec<String>> {
    let h = rd.headers().map_err(csv_error)?.clone();
    if h.is_empty() || h.iter().all(str::is_empty) {
        return Err(NndpError::schema(1, "missing header"));
    }
    Ok(h.iter().map(str::to_string).collect())
}

fn line_of(rec: &StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn number(rec: &StringRecord, col: usize, name: &str) -> Result<f64> {
    let field = rec.get(col).unwrap_or("");
    let v: f64 = field
        .parse()
        .map_err(|_| NndpError::schema(line_of(rec), format!("column '{name}': cannot parse '{field}' as a number")))?;
    if !v.is_finite() {
        return Err(NndpError::schema(line_of(rec), format!("column '{name}': non-finite value '{field}'")));
    }
    Ok(v)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| NndpError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| NndpError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Leading `x1..xd` columns of a header; other columns may follow.
fn coordinate_columns(h: &[String]) -> Result<usize> {
    let d = h.iter().take_while(|c| c.strip_prefix('x').and_then(|k| k.parse::<usize>().ok()).is_some()).count();
    if d == 0 {
        return Err(NndpError::schema(1, "header must start with coordinate columns x1..xd"));
    }
    for (i, c) in h.iter().take(d).enumerate() {
        if *c != format!("x{}", i + 1) {
            return Err(NndpError::schema(1, format!("coordinate column {} must be named 'x{}', found '{c}'", i + 1, i + 1)));
        }
    }
    Ok(d)
}

fn coord_header(d: usize) -> impl Iterator<Item = String> {
    (1..=d).map(|i| format!("x{i}"))
}

/// Reads `x1..xd,y[,tg_e1..tg_ed]`.
pub fn read_data<R: Read>(r: R) -> Result<DataTable> {
    let mut rd = reader(r);
    let h = header(&mut rd)?;
    let d = coordinate_columns(&h)?;
    if h.get(d).map(String::as_str) != Some("y") {
        return Err(NndpError::schema(1, format!("column {} must be 'y'", d + 1)));
    }
    let extra = &h[d + 1..];
    let has_truth = match extra.len() {
        0 => false,
        n if n == d => {
            for (a, c) in extra.iter().enumerate() {
                if *c != format!("tg_e{}", a + 1) {
                    return Err(NndpError::schema(1, format!("expected truth column 'tg_e{}', found '{c}'", a + 1)));
                }
            }
            true
        }
        _ => {
            return Err(NndpError::schema(
                1,
                format!("after 'y' expect either nothing or {d} truth columns tg_e1..tg_e{d}, found {}", extra.len()),
            ))
        }
    };
    let mut coords = Vec::new();
    let mut y = Vec::new();
    let mut truth = vec![Vec::new(); if has_truth { d } else { 0 }];
    for rec in rd.records() {
        let rec = rec.map_err(csv_error)?;
        for c in 0..d {
            coords.push(number(&rec, c, &h[c])?);
        }
        y.push(number(&rec, d, "y")?);
        for (a, t) in truth.iter_mut().enumerate() {
            t.push(number(&rec, d + 1 + a, &h[d + 1 + a])?);
        }
    }
    if y.is_empty() {
        return Err(NndpError::schema(2, "no data rows"));
    }
    Ok(DataTable { points: Points::new(d, coords)?, y, truth: has_truth.then_some(truth) })
}

pub fn read_data_path(path: &Path) -> Result<DataTable> {
    read_data(open(path)?)
}

/// Writes `x1..xd,y[,tg_e1..tg_ed]`; `gradients[i]` is the true gradient of row `i`.
pub fn write_data<W: Write>(w: W, points: &Points, y: &[f64], gradients: Option<&[Vec<f64>]>) -> Result<()> {
    if y.len() != points.len() {
        return Err(NndpError::LengthMismatch { what: "response", expected: points.len(), found: y.len() });
    }
    let d = points.dim();
    let mut wr = WriterBuilder::new().from_writer(w);
    let mut head: Vec<String> = coord_header(d).collect();
    head.push("y".into());
    if gradients.is_some() {
        head.extend((1..=d).map(|a| format!("tg_e{a}")));
    }
    wr.write_record(&head).map_err(csv_error)?;
    for (i, p) in points.iter().enumerate() {
        let mut row: Vec<String> = p.iter().map(f64::to_string).collect();
        row.push(y[i].to_string());
        if let Some(g) = gradients {
            row.extend(g[i].iter().take(d).map(f64::to_string));
        }
        wr.write_record(&row).map_err(csv_error)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_data_path(path: &Path, points: &Points, y: &[f64], gradients: Option<&[Vec<f64>]>) -> Result<()> {
    write_data(create(path)?, points, y, gradients)
}

/// Reads target locations from the leading `x1..xd` columns; other columns are ignored.
pub fn read_points<R: Read>(r: R) -> Result<Points> {
    let mut rd = reader(r);
    let h = header(&mut rd)?;
    let d = coordinate_columns(&h)?;
    let mut coords = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_error)?;
        for c in 0..d {
            coords.push(number(&rec, c, &h[c])?);
        }
    }
    if coords.is_empty() {
        return Err(NndpError::schema(2, "no data rows"));
    }
    Points::new(d, coords)
}

pub fn read_points_path(path: &Path) -> Result<Points> {
    read_points(open(path)?)
}

/// Converts an arbitrary CSV into a [`DataTable`], picking coordinate and
/// value columns by header name.
pub fn ingest<R: Read>(r: R, coord_names: &[String], value_name: &str) -> Result<DataTable> {
    if coord_names.is_empty() {
        return Err(NndpError::InvalidConfig("at least one coordinate column is required".into()));
    }
    let mut rd = reader(r);
    let h = header(&mut rd)?;
    let find = |name: &str| {
        h.iter().position(|c| c == name).ok_or_else(|| NndpError::schema(1, format!("column '{name}' not found in header")))
    };
    let cols: Vec<usize> = coord_names.iter().map(|n| find(n)).collect::<Result<_>>()?;
    let vcol = find(value_name)?;
    let mut coords = Vec::new();
    let mut y = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_error)?;
        for (&c, name) in cols.iter().zip(coord_names) {
            coords.push(number(&rec, c, name)?);
        }
        y.push(number(&rec, vcol, value_name)?);
    }
    if y.is_empty() {
        return Err(NndpError::schema(2, "no data rows"));
    }
    Ok(DataTable { points: Points::new(coord_names.len(), coords)?, y, truth: None })
}

/// Writes `x1..xd,direction,estimate,sd,n_samples`, target-major.
pub fn write_gradients<W: Write>(w: W, field: &GradientField) -> Result<()> {
    let d = field.points.first().map_or(0, Vec::len);
    let mut wr = WriterBuilder::new().from_writer(w);
    let mut head: Vec<String> = coord_header(d).collect();
    head.extend(["direction", "estimate", "sd", "n_samples"].map(String::from));
    wr.write_record(&head).map_err(csv_error)?;
    let labels: Vec<String> = field.directions.iter().map(Direction::label).collect();
    for (t, p) in field.points.iter().enumerate() {
        for (k, label) in labels.iter().enumerate() {
            let mut row: Vec<String> = p.iter().map(f64::to_string).collect();
            row.push(label.clone());
            row.push(field.estimate(t, k).to_string());
            row.push(field.sd(t, k).to_string());
            row.push(field.n_samples[t * labels.len() + k].to_string());
            wr.write_record(&row).map_err(csv_error)?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub fn write_gradients_path(path: &Path, field: &GradientField) -> Result<()> {
    write_gradients(create(path)?, field)
}

pub fn read_gradients<R: Read>(r: R) -> Result<Vec<GradientRow>> {
    let mut rd = reader(r);
    let h = header(&mut rd)?;
    let d = coordinate_columns(&h)?;
    let expected = ["direction", "estimate", "sd", "n_samples"];
    if h.len() != d + expected.len() || h[d..].iter().zip(expected).any(|(a, b)| a != b) {
        return Err(NndpError::schema(1, format!("gradient header must be x1..x{d},direction,estimate,sd,n_samples")));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_error)?;
        let point = (0..d).map(|c| number(&rec, c, &h[c])).collect::<Result<_>>()?;
        let n_field = rec.get(d + 3).unwrap_or("");
        let n_samples = n_field
            .parse()
            .map_err(|_| NndpError::schema(line_of(&rec), format!("column 'n_samples': cannot parse '{n_field}' as a count")))?;
        rows.push(GradientRow {
            point,
            direction: rec.get(d).unwrap_or("").to_string(),
            estimate: number(&rec, d + 1, "estimate")?,
            sd: number(&rec, d + 2, "sd")?,
            n_samples,
        });
    }
    Ok(rows)
}

pub fn read_gradients_path(path: &Path) -> Result<Vec<GradientRow>> {
    read_gradients(open(path)?)
}

/// Writes `x1..xd,norm`.
pub fn write_magnitude<W: Write>(w: W, points: &[Vec<f64>], norms: &[f64]) -> Result<()> {
    if points.len() != norms.len() {
        return Err(NndpError::LengthMismatch { what: "magnitudes", expected: points.len(), found: norms.len() });
    }
    let d = points.first().map_or(0, Vec::len);
    let mut wr = WriterBuilder::new().from_writer(w);
    let mut head: Vec<String> = coord_header(d).collect();
    head.push("norm".into());
    wr.write_record(&head).map_err(csv_error)?;
    for (p, n) in points.iter().zip(norms) {
        let mut row: Vec<String> = p.iter().map(f64::to_string).collect();
        row.push(n.to_string());
        wr.write_record(&row).map_err(csv_error)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_magnitude_path(path: &Path, points: &[Vec<f64>], norms: &[f64]) -> Result<()> {
    write_magnitude(create(path)?, points, norms)
}

/// Writes `iteration,sigma2,phi[,tau2][,beta1..]` after `# key=value` lines
/// carrying the smoothness and sampler diagnostics.
pub fn write_chain<W: Write>(mut w: W, chain: &Chain) -> Result<()> {
    writeln!(w, "# smoothness={}", chain.smoothness)?;
    writeln!(w, "# acceptance_rate={}", chain.acceptance_rate)?;
    writeln!(w, "# final_step={}", chain.final_step)?;
    let has_tau = chain.draws.first().is_some_and(|d| d.tau2.is_some());
    let p = chain.draws.first().map_or(0, |d| d.beta.len());
    let mut wr = WriterBuilder::new().from_writer(w);
    let mut head: Vec<String> = ["iteration", "sigma2", "phi"].map(String::from).to_vec();
    if has_tau {
        head.push("tau2".into());
    }
    head.extend((1..=p).map(|j| format!("beta{j}")));
    wr.write_record(&head).map_err(csv_error)?;
    for d in &chain.draws {
        let mut row = vec![d.iteration.to_string(), d.sigma2.to_string(), d.phi.to_string()];
        if let Some(t) = d.tau2 {
            row.push(t.to_string());
        }
        row.extend(d.beta.iter().map(f64::to_string));
        wr.write_record(&row).map_err(csv_error)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_chain_path(path: &Path, chain: &Chain) -> Result<()> {
    write_chain(create(path)?, chain)
}

fn chain_metadata(text: &str) -> Result<(Smoothness, f64, f64)> {
    let mut smoothness = None;
    let (mut rate, mut step) = (f64::NAN, f64::NAN);
    for (i, line) in text.lines().enumerate() {
        let Some(body) = line.trim().strip_prefix('#') else { continue };
        let Some((k, v)) = body.split_once('=') else { continue };
        let bad = |what: &str| NndpError::schema(i as u64 + 1, format!("cannot parse {what} '{}'", v.trim()));
        match k.trim() {
            "smoothness" => smoothness = Some(v.trim().parse().map_err(|_| bad("smoothness"))?),
            "acceptance_rate" => rate = v.trim().parse().map_err(|_| bad("acceptance rate"))?,
            "final_step" => step = v.trim().parse().map_err(|_| bad("step"))?,
            _ => {}
        }
    }
    let smoothness = smoothness.ok_or_else(|| NndpError::schema(1, "chain file lacks a '# smoothness=' line"))?;
    Ok((smoothness, rate, step))
}

/// Reads a chain written by [`write_chain`]. Every draw shares `latent`,
/// which is the observed field in noise-free mode; full-hierarchical chains
/// take their latent draws from [`read_latent`] afterwards.
pub fn read_chain<R: Read>(mut r: R, latent: Arc<Vec<f64>>) -> Result<Chain> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let (smoothness, acceptance_rate, final_step) = chain_metadata(&text)?;
    let mut rd = reader(text.as_bytes());
    let h = header(&mut rd)?;
    if h.len() < 3 || h[..3] != ["iteration", "sigma2", "phi"] {
        return Err(NndpError::schema(first_data_line(&text), "chain header must start with iteration,sigma2,phi"));
    }
    let has_tau = h.get(3).is_some_and(|c| c == "tau2");
    let beta0 = 3 + has_tau as usize;
    for (j, c) in h[beta0..].iter().enumerate() {
        if *c != format!("beta{}", j + 1) {
            return Err(NndpError::schema(first_data_line(&text), format!("expected column 'beta{}', found '{c}'", j + 1)));
        }
    }
    let mut draws = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(csv_error)?;
        let it_field = rec.get(0).unwrap_or("");
        let iteration = it_field
            .parse()
            .map_err(|_| NndpError::schema(line_of(&rec), format!("column 'iteration': cannot parse '{it_field}'")))?;
        let sigma2 = number(&rec, 1, "sigma2")?;
        let phi = number(&rec, 2, "phi")?;
        if !(sigma2 > 0.0 && phi > 0.0) {
            return Err(NndpError::schema(line_of(&rec), "sigma2 and phi must be positive"));
        }
        let tau2 = if has_tau { Some(number(&rec, 3, "tau2")?) } else { None };
        let beta = (beta0..h.len()).map(|c| number(&rec, c, &h[c])).collect::<Result<_>>()?;
        draws.push(PosteriorDraw { iteration, beta, sigma2, phi, tau2, latent: Arc::clone(&latent) });
    }
    if draws.is_empty() {
        return Err(NndpError::schema(first_data_line(&text) + 1, "chain file has no draws"));
    }
    Ok(Chain { draws, smoothness, acceptance_rate, final_step })
}

fn first_data_line(text: &str) -> u64 {
    text.lines().position(|l| !l.trim_start().starts_with('#')).map_or(1, |i| i as u64 + 1)
}

pub fn read_chain_path(path: &Path, latent: Arc<Vec<f64>>) -> Result<Chain> {
    read_chain(open(path)?, latent)
}

/// Writes latent draws `iteration,w1..wn` with sites in input order.
pub fn write_latent<W: Write>(w: W, chain: &Chain, reference: &ReferenceSet) -> Result<()> {
    let n = reference.len();
    let mut wr = WriterBuilder::new().from_writer(w);
    let mut head = vec!["iteration".to_string()];
    head.extend((1..=n).map(|i| format!("w{i}")));
    wr.write_record(&head).map_err(csv_error)?;
    let mut inv = vec![0; n];
    for (ord, &inp) in reference.permutation().iter().enumerate() {
        inv[inp] = ord;
    }
    for d in &chain.draws {
        let mut row = vec![d.iteration.to_string()];
        row.extend(inv.iter().map(|&o| d.latent[o].to_string()));
        wr.write_record(&row).map_err(csv_error)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_latent_path(path: &Path, chain: &Chain, reference: &ReferenceSet) -> Result<()> {
    write_latent(create(path)?, chain, reference)
}

/// Replaces the latent field of each draw with the rows of a latent file.
pub fn read_latent<R: Read>(r: R, chain: &mut Chain, reference: &ReferenceSet) -> Result<()> {
    let n = reference.len();
    let mut rd = reader(r);
    let h = header(&mut rd)?;
    if h.len() != n + 1 || h[0] != "iteration" {
        return Err(NndpError::schema(1, format!("latent header must be iteration,w1..w{n}")));
    }
    let perm = reference.permutation();
    let mut k = 0;
    for rec in rd.records() {
        let rec = rec.map_err(csv_error)?;
        let draw = chain
            .draws
            .get_mut(k)
            .ok_or_else(|| NndpError::schema(line_of(&rec), "more latent rows than chain draws"))?;
        if rec.get(0).and_then(|v| v.parse::<usize>().ok()) != Some(draw.iteration) {
            return Err(NndpError::schema(line_of(&rec), format!("iteration does not match chain draw {}", draw.iteration)));
        }
        let w: Vec<f64> = perm.iter().map(|&inp| number(&rec, inp + 1, &h[inp + 1])).collect::<Result<_>>()?;
        draw.latent = Arc::new(w);
        k += 1;
    }
    if k != chain.draws.len() {
        return Err(NndpError::LengthMismatch { what: "latent draws", expected: chain.draws.len(), found: k });
    }
    Ok(())
}

pub fn read_latent_path(path: &Path, chain: &mut Chain, reference: &ReferenceSet) -> Result<()> {
    read_latent(open(path)?, chain, reference)
}

/// Writes `key=value` lines.
pub fn write_metrics<W: Write>(mut w: W, entries: &[(String, String)]) -> Result<()> {
    for (k, v) in entries {
        writeln!(w, "{k}={v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_path(path: &Path, entries: &[(String, String)]) -> Result<()> {
    write_metrics(create(path)?, entries)
}

/// Reads `key=value` lines; blank lines and `#` comments are skipped.
pub fn read_metrics<R: Read>(r: R) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let (k, v) = t.split_once('=').ok_or_else(|| NndpError::schema(i as u64 + 1, "expected key=value"))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neighbors::{order_reference, OrderingScheme};

    fn schema_line(e: NndpError) -> u64 {
        match e {
            NndpError::Schema { line, .. } => line,
            other => panic!("expected schema error, got {other}"),
        }
    }

    #[test]
    fn data_round_trip() {
        let pts = Points::from_rows(&[vec![0.0, 0.5], vec![0.25, 1.0], vec![1.0, 0.0]]).unwrap();
        let y = vec![1.5, -2.0, 0.1];
        let g = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        let mut buf = Vec::new();
        write_data(&mut buf, &pts, &y, Some(&g)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), "x1,x2,y,tg_e1,tg_e2");
        let t = read_data(buf.as_slice()).unwrap();
        assert_eq!(t.points, pts);
        assert_eq!(t.y, y);
        assert_eq!(t.truth.unwrap(), vec![vec![1.0, 3.0, 5.0], vec![2.0, 4.0, 6.0]]);

        let mut buf = Vec::new();
        write_data(&mut buf, &pts, &y, None).unwrap();
        assert_eq!(read_data(buf.as_slice()).unwrap().truth, None);
    }

    #[test]
    fn schema_errors_carry_lines() {
        assert_eq!(schema_line(read_data("a,b\n1,2\n".as_bytes()).unwrap_err()), 1);
        assert_eq!(schema_line(read_data("x1,x2,z\n1,2,3\n".as_bytes()).unwrap_err()), 1);
        assert_eq!(schema_line(read_data("x1,y,tg_e2\n1,2,3\n".as_bytes()).unwrap_err()), 1);
        assert_eq!(schema_line(read_data("x1,y\n1,2\n3,abc\n".as_bytes()).unwrap_err()), 3);
        assert_eq!(schema_line(read_data("x1,y\n1,2\n3\n".as_bytes()).unwrap_err()), 3);
        assert_eq!(schema_line(read_data("x1,y\n1,2\n2,inf\n".as_bytes()).unwrap_err()), 3);
        assert_eq!(schema_line(read_data("x1,y\n".as_bytes()).unwrap_err()), 2);
        assert_eq!(schema_line(read_data("".as_bytes()).unwrap_err()), 1);
    }

    #[test]
    fn ingest_by_name() {
        let t = ingest("id,lat,temp,lon\n7,1.5,20,3\n8,2.5,21,4\n".as_bytes(), &["lon".into(), "lat".into()], "temp").unwrap();
        assert_eq!(t.points.point(0), &[3.0, 1.5]);
        assert_eq!(t.y, vec![20.0, 21.0]);
        assert_eq!(schema_line(ingest("a,b\n1,2\n".as_bytes(), &["a".into()], "c").unwrap_err()), 1);
    }

    #[test]
    fn gradient_round_trip() {
        let field = GradientField {
            points: vec![vec![0.0, 1.0], vec![2.0, 3.0]],
            directions: vec![Direction::axis(2, 0), Direction::new(vec![0.6, 0.8]).unwrap()],
            estimate: vec![1.0, 2.0, 3.0, 4.0],
            sd: vec![0.1, 0.2, 0.3, 0.4],
            n_samples: vec![10; 4],
            samples: None,
        };
        let mut buf = Vec::new();
        write_gradients(&mut buf, &field).unwrap();
        let rows = read_gradients(buf.as_slice()).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[1].direction, "0.6:0.8");
        assert_eq!(rows[2], GradientRow { point: vec![2.0, 3.0], direction: "e1".into(), estimate: 3.0, sd: 0.3, n_samples: 10 });
        assert_eq!(Direction::parse(&rows[1].direction, 2).unwrap(), field.directions[1]);
    }

    #[test]
    fn chain_and_latent_round_trip() {
        let pts = Points::from_rows(&[vec![1.0], vec![0.0], vec![2.0]]).unwrap();
        let reference = order_reference(&pts, OrderingScheme::CoordinateSum).unwrap();
        let draw = |it, s: f64| PosteriorDraw {
            iteration: it,
            beta: vec![0.5, -1.0],
            sigma2: s,
            phi: 3.0,
            tau2: Some(0.01),
            latent: Arc::new(vec![10.0 + s, 20.0, 30.0]),
        };
        let chain = Chain { draws: vec![draw(4, 1.0), draw(5, 2.0)], smoothness: Smoothness::Rbf, acceptance_rate: 0.25, final_step: 0.05 };
        let (mut cbuf, mut lbuf) = (Vec::new(), Vec::new());
        write_chain(&mut cbuf, &chain).unwrap();
        write_latent(&mut lbuf, &chain, &reference).unwrap();
        let mut back = read_chain(cbuf.as_slice(), Arc::new(vec![0.0; 3])).unwrap();
        read_latent(lbuf.as_slice(), &mut back, &reference).unwrap();
        assert_eq!(back.smoothness, Smoothness::Rbf);
        assert_eq!((back.acceptance_rate, back.final_step), (0.25, 0.05));
        for (a, b) in back.draws.iter().zip(&chain.draws) {
            assert_eq!((a.iteration, a.sigma2, a.phi, a.tau2, &a.beta), (b.iteration, b.sigma2, b.phi, b.tau2, &b.beta));
            assert_eq!(a.latent, b.latent);
        }
        let bad = "# smoothness=rbf\niteration,sigma2,phi\n1,2,3\n2,-1,3\n";
        assert_eq!(schema_line(read_chain(bad.as_bytes(), Arc::new(vec![])).unwrap_err()), 4);
        assert!(read_chain("iteration,sigma2,phi\n1,2,3\n".as_bytes(), Arc::new(vec![])).is_err());
    }

    #[test]
    fn metrics_round_trip() {
        let entries = vec![("cor_e1".to_string(), "0.999".to_string()), ("mse_e1".to_string(), "1.5".to_string())];
        let mut buf = Vec::new();
        write_metrics(&mut buf, &entries).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "cor_e1=0.999\nmse_e1=1.5\n");
        assert_eq!(read_metrics(buf.as_slice()).unwrap(), entries);
        assert_eq!(schema_line(read_metrics("a=1\n\nnope\n".as_bytes()).unwrap_err()), 3);
    }
}
