//! Text event files, labeled event files, scene specs and PGM/PPM rendering.
//!
//! Event files start with a `# width height` header followed by one
//! `t x y p` line per event (microseconds, pixels, polarity 0 or 1). Labeled
//! files append a label column, where 255 marks an outlier, and may carry
//! `# window t_start t_end` and `# model label m_u m_v m_s m_theta` lines.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::event::{warp_event, Event, EventWindow, Iwe, Polarity};
use crate::level2::EventLabeling;
use crate::motion::{FourParamMotion, Point2};
use crate::synth::{BackgroundSpec, GroundTruth, ObjectSpec, SceneSpec, Shape};
use crate::{Error, Result};

pub const OUTLIER_LABEL: u32 = 255;

/// Events of a whole recording before slicing into windows.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub width: u32,
    pub height: u32,
    pub events: Vec<Event>,
}

impl EventStream {
    pub fn from_window(w: &EventWindow) -> Self {
        Self {
            width: w.width,
            height: w.height,
            events: w.events.clone(),
        }
    }

    /// Consecutive windows of `delta_t_us` starting at the first event. Each
    /// window is half-open except the last, which also takes events sitting
    /// exactly on its end. Empty windows inside a gap are skipped.
    pub fn slice(&self, delta_t_us: u64) -> Vec<EventWindow> {
        assert!(delta_t_us > 0, "window width must be positive");
        let (Some(first), Some(last)) = (self.events.first(), self.events.last()) else {
            return Vec::new();
        };
        let t0 = first.t;
        let n = (last.t - t0).div_ceil(delta_t_us).max(1);
        let index = |t: u64| ((t - t0) / delta_t_us).min(n - 1);
        let mut out = Vec::new();
        let mut begin = 0;
        while begin < self.events.len() {
            let k = index(self.events[begin].t);
            let end = begin + self.events[begin..].partition_point(|e| index(e.t) == k);
            out.push(EventWindow {
                events: self.events[begin..end].to_vec(),
                t_start: t0 + k * delta_t_us,
                t_end: t0 + (k + 1) * delta_t_us,
                width: self.width,
                height: self.height,
            });
            begin = end;
        }
        out
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn field<T: std::str::FromStr>(tok: Option<&str>, name: &str, line: usize) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(line, format!("missing field '{name}'")))?;
    tok.parse()
        .map_err(|_| parse_err(line, format!("invalid {name} '{tok}'")))
}

fn parse_header(line: &str, n: usize) -> Result<(u32, u32)> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| parse_err(n, "expected '# width height' header"))?;
    let mut it = body.split_whitespace();
    let w: u32 = field(it.next(), "width", n)?;
    let h: u32 = field(it.next(), "height", n)?;
    if w == 0 || h == 0 || it.next().is_some() {
        return Err(parse_err(n, "expected '# width height' header"));
    }
    Ok((w, h))
}

/// Everything a labeled or ground-truth file holds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledEvents {
    pub width: u32,
    pub height: u32,
    pub events: Vec<Event>,
    /// `None` for outliers.
    pub labels: Vec<Option<u32>>,
    /// Event index ranges announced by `# window` lines.
    pub windows: Vec<(u64, u64, std::ops::Range<usize>)>,
    pub models: Vec<(u32, FourParamMotion)>,
}

struct Reader {
    width: u32,
    height: u32,
    prev_t: Option<u64>,
}

impl Reader {
    fn event<'a>(&mut self, toks: &mut impl Iterator<Item = &'a str>, n: usize) -> Result<Event> {
        let t: u64 = field(toks.next(), "t", n)?;
        let x: u32 = field(toks.next(), "x", n)?;
        let y: u32 = field(toks.next(), "y", n)?;
        let p = match toks.next() {
            Some("0") => Polarity::Negative,
            Some("1") => Polarity::Positive,
            Some(other) => return Err(parse_err(n, format!("invalid polarity '{other}'"))),
            None => return Err(parse_err(n, "missing field 'p'")),
        };
        if let Some(prev) = self.prev_t {
            if t < prev {
                return Err(Error::Order { line: n, t, prev });
            }
        }
        if x >= self.width || y >= self.height {
            return Err(Error::Bounds {
                line: n,
                x,
                y,
                width: self.width,
                height: self.height,
            });
        }
        self.prev_t = Some(t);
        Ok(Event::new(x, y, t, p))
    }
}

/// Lines after the header, with 1-based line numbers; blank lines dropped.
fn body_lines<R: BufRead>(r: R) -> Result<(u32, u32, Vec<(usize, String)>)> {
    let mut lines = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| parse_err(i + 1, e.to_string()))?;
        if !line.trim().is_empty() {
            lines.push((i + 1, line));
        }
    }
    let Some((n, first)) = lines.first() else {
        return Err(parse_err(1, "missing '# width height' header"));
    };
    let (w, h) = parse_header(first.trim(), *n)?;
    lines.remove(0);
    Ok((w, h, lines))
}

fn no_extra<'a>(mut toks: impl Iterator<Item = &'a str>, n: usize) -> Result<()> {
    match toks.next() {
        Some(tok) => Err(parse_err(n, format!("unexpected field '{tok}'"))),
        None => Ok(()),
    }
}

/// Parses an event file.
pub fn parse_events<R: BufRead>(r: R) -> Result<EventStream> {
    let (width, height, lines) = body_lines(r)?;
    let mut rd = Reader {
        width,
        height,
        prev_t: None,
    };
    let mut events = Vec::with_capacity(lines.len());
    for (n, line) in &lines {
        let line = line.trim();
        if line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        events.push(rd.event(&mut toks, *n)?);
        no_extra(toks, *n)?;
    }
    Ok(EventStream { width, height, events })
}

/// Parses a labeled event file or a ground-truth file.
pub fn parse_labeled<R: BufRead>(r: R) -> Result<LabeledEvents> {
    let (width, height, lines) = body_lines(r)?;
    let mut rd = Reader {
        width,
        height,
        prev_t: None,
    };
    let mut out = LabeledEvents {
        width,
        height,
        ..Default::default()
    };
    let close = |out: &mut LabeledEvents| {
        if let Some(last) = out.windows.last_mut() {
            last.2.end = out.events.len();
        }
    };
    for (n, line) in &lines {
        let n = *n;
        let line = line.trim();
        if let Some(rest) = line.strip_prefix('#') {
            let mut toks = rest.split_whitespace();
            match toks.next() {
                Some("window") => {
                    close(&mut out);
                    let a: u64 = field(toks.next(), "t_start", n)?;
                    let b: u64 = field(toks.next(), "t_end", n)?;
                    let at = out.events.len();
                    out.windows.push((a, b, at..at));
                }
                Some("model") => {
                    let l: u32 = field(toks.next(), "label", n)?;
                    let mut p = [0.0; 4];
                    for (v, name) in p.iter_mut().zip(["m_u", "m_v", "m_s", "m_theta"]) {
                        *v = field(toks.next(), name, n)?;
                    }
                    out.models.push((l, FourParamMotion::from_array(p)));
                }
                _ => continue,
            }
            no_extra(toks, n)?;
            continue;
        }
        let mut toks = line.split_whitespace();
        let e = rd.event(&mut toks, n)?;
        let label: u32 = field(toks.next(), "label", n)?;
        no_extra(toks, n)?;
        out.events.push(e);
        out.labels.push((label != OUTLIER_LABEL).then_some(label));
    }
    close(&mut out);
    Ok(out)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

pub fn read_events(path: &Path) -> Result<EventStream> {
    with_path(path, parse_events(open(path)?))
}

pub fn read_labeled(path: &Path) -> Result<LabeledEvents> {
    with_path(path, parse_labeled(open(path)?))
}

fn polarity_bit(p: Polarity) -> u8 {
    match p {
        Polarity::Negative => 0,
        Polarity::Positive => 1,
    }
}

fn write_event<W: Write>(out: &mut W, e: &Event) -> std::io::Result<()> {
    write!(out, "{} {} {} {}", e.t, e.x, e.y, polarity_bit(e.p))
}

pub fn write_events<W: Write>(out: &mut W, s: &EventStream) -> std::io::Result<()> {
    writeln!(out, "# {} {}", s.width, s.height)?;
    for e in &s.events {
        write_event(out, e)?;
        writeln!(out)?;
    }
    Ok(())
}

/// File labels for one window: clusters numbered by decreasing size (ties
/// by cluster index), so label 0 is the largest cluster.
pub fn file_labels(l: &EventLabeling) -> Result<Vec<u32>> {
    let n = l.labels.iter().flatten().map(|&j| j + 1).max().unwrap_or(0);
    if n >= OUTLIER_LABEL as usize {
        return Err(Error::Config(format!("{n} clusters do not fit the label format")));
    }
    let mut size = vec![0usize; n];
    for &j in l.labels.iter().flatten() {
        size[j] += 1;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| size[b].cmp(&size[a]).then(a.cmp(&b)));
    let mut rank = vec![0u32; n];
    for (r, &j) in order.iter().enumerate() {
        rank[j] = r as u32;
    }
    Ok(l.labels.iter().map(|o| o.map_or(OUTLIER_LABEL, |j| rank[j])).collect())
}

/// Writes labeled windows, each preceded by a `# window` line. Optional
/// per-window models are written as `# model` lines in file-label order.
pub fn write_labeled_events<W: Write>(
    out: &mut W,
    width: u32,
    height: u32,
    parts: &[(&EventWindow, &EventLabeling, &[FourParamMotion])],
) -> Result<()> {
    let io = |e: std::io::Error| Error::Io {
        path: "<output>".into(),
        msg: e.to_string(),
    };
    writeln!(out, "# {width} {height}").map_err(io)?;
    for (w, l, models) in parts {
        if w.len() != l.len() {
            return Err(Error::LengthMismatch {
                left: w.len(),
                right: l.len(),
            });
        }
        let labels = file_labels(l)?;
        writeln!(out, "# window {} {}", w.t_start, w.t_end).map_err(io)?;
        let mut by_file: Vec<(u32, FourParamMotion)> = Vec::new();
        for (j, m) in models.iter().enumerate() {
            if let Some(i) = l.labels.iter().position(|&o| o == Some(j)) {
                by_file.push((labels[i], *m));
            }
        }
        by_file.sort_by_key(|&(k, _)| k);
        for (k, m) in by_file {
            writeln!(out, "# model {k} {} {} {} {}", m.m_u, m.m_v, m.m_s, m.m_theta).map_err(io)?;
        }
        for (e, lab) in w.events.iter().zip(&labels) {
            write_event(out, e).map_err(io)?;
            writeln!(out, " {lab}").map_err(io)?;
        }
    }
    Ok(())
}

/// Ground truth as a labeled file: `# model` lines for every label, then
/// the events with their true labels.
pub fn write_ground_truth<W: Write>(out: &mut W, w: &EventWindow, gt: &GroundTruth) -> std::io::Result<()> {
    writeln!(out, "# {} {}", w.width, w.height)?;
    for (k, m) in gt.motions.iter().enumerate() {
        writeln!(out, "# model {k} {} {} {} {}", m.m_u, m.m_v, m.m_s, m.m_theta)?;
    }
    for (e, l) in w.events.iter().zip(&gt.labels) {
        write_event(out, e)?;
        writeln!(out, " {l}")?;
    }
    Ok(())
}

/// Creates `path` and hands a buffered writer to `f`.
pub fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    f(&mut out).map_err(|e| match e {
        Error::Io { msg, .. } => Error::Io {
            path: path.display().to_string(),
            msg,
        },
        other => other,
    })?;
    out.flush().map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Rendering

pub const PALETTE: [[u8; 3]; 12] = [
    [230, 25, 75],
    [60, 180, 75],
    [0, 130, 200],
    [255, 225, 25],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [170, 110, 40],
];
pub const OUTLIER_COLOR: [u8; 3] = [128, 128, 128];

/// Binary PGM scaled linearly so the maximum maps to 255.
pub fn write_pgm<W: Write>(out: &mut W, iwe: &Iwe) -> std::io::Result<()> {
    let max = iwe.max();
    write!(out, "P5\n{} {}\n255\n", iwe.width, iwe.height)?;
    let bytes: Vec<u8> = iwe
        .pixels
        .iter()
        .map(|&v| if max > 0.0 { (255.0 * v / max).round() as u8 } else { 0 })
        .collect();
    out.write_all(&bytes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<[u8; 3]>,
}

pub fn write_ppm<W: Write>(out: &mut W, img: &RgbImage) -> std::io::Result<()> {
    write!(out, "P6\n{} {}\n255\n", img.width, img.height)?;
    out.write_all(&img.data.concat())
}

/// Colors each pixel by the label with the most events there; pixels
/// without events stay black.
pub fn render_labels(width: u32, height: u32, events: &[Event], labels: &[Option<u32>]) -> RgbImage {
    let n_px = width as usize * height as usize;
    // Slot 0 counts outliers, slot k + 1 counts label k.
    let slots = labels.iter().flatten().map(|&l| l as usize + 2).max().unwrap_or(1);
    let mut counts = vec![0u32; n_px * slots];
    for (e, l) in events.iter().zip(labels) {
        let px = e.y as usize * width as usize + e.x as usize;
        counts[px * slots + l.map_or(0, |l| l as usize + 1)] += 1;
    }
    let data = (0..n_px)
        .map(|px| {
            let c = &counts[px * slots..(px + 1) * slots];
            // Labels before outliers on ties.
            let best = (1..slots).chain([0]).max_by_key(|&s| (c[s], s != 0, std::cmp::Reverse(s))).unwrap();
            match (c[best], best) {
                (0, _) => [0, 0, 0],
                (_, 0) => OUTLIER_COLOR,
                (_, s) => PALETTE[(s - 1) % PALETTE.len()],
            }
        })
        .collect();
    RgbImage { width, height, data }
}

/// Raw event-count image, no warping.
pub fn count_image(width: u32, height: u32, events: &[Event]) -> Iwe {
    let mut iwe = Iwe::zeros(width, height, 0);
    for e in events {
        let (x, y) = (e.x as usize, e.y as usize);
        iwe.set(x, y, iwe.get(x, y) + 1.0);
    }
    iwe
}

/// Every clustered event warped to the window midpoint by its own cluster's
/// motion; outliers are left out.
pub fn compensated_iwe(w: &EventWindow, l: &EventLabeling, models: &[FourParamMotion], eps: f64) -> Iwe {
    let t_ref = w.t_start + (w.t_end - w.t_start) / 2;
    let mut iwe = Iwe::zeros(w.width, w.height, t_ref);
    for (e, lab) in w.events.iter().zip(&l.labels) {
        if let Some(j) = *lab {
            iwe.splat(warp_event(e, &models[j], t_ref, w.center()), eps);
        }
    }
    iwe
}

// ---------------------------------------------------------------------------
// Scene specs

fn spec_err(n: usize, msg: impl std::fmt::Display) -> Error {
    Error::InvalidSpec(format!("line {n}: {msg}"))
}

fn floats(value: &str, k: usize, n: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = value
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| spec_err(n, format!("invalid number '{t}'"))))
        .collect::<Result<_>>()?;
    if v.len() != k {
        return Err(spec_err(n, format!("expected {k} numbers, got {}", v.len())));
    }
    Ok(v)
}

fn motion(value: &str, n: usize) -> Result<FourParamMotion> {
    let v = floats(value, 4, n)?;
    Ok(FourParamMotion::new(v[0], v[1], v[2], v[3]))
}

/// Parses a scene spec. Each `object.shape` line opens a new object block
/// that the following `object.*` lines fill in.
pub fn parse_scene_spec(text: &str) -> Result<SceneSpec> {
    let mut spec = SceneSpec {
        background: BackgroundSpec {
            density: SceneSpec::default().background.density,
            motion: FourParamMotion::ZERO,
        },
        ..SceneSpec::default()
    };
    for (i, line) in text.lines().enumerate() {
        let n = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| spec_err(n, "expected key=value"))?;
        let (key, value) = (key.trim(), value.trim());
        let one = |v: &str| floats(v, 1, n).map(|v| v[0]);
        if key == "object.shape" {
            let shape = match value {
                "rect" => Shape::Rect {
                    width: 0.0,
                    height: 0.0,
                },
                "disk" => Shape::Disk { radius: 0.0 },
                _ => return Err(spec_err(n, format!("unknown shape '{value}'"))),
            };
            spec.objects.push(ObjectSpec {
                shape,
                center: Point2::new(0.0, 0.0),
                density: spec.background.density,
                motion: FourParamMotion::ZERO,
            });
            continue;
        }
        if let Some(field) = key.strip_prefix("object.") {
            let obj = spec
                .objects
                .last_mut()
                .ok_or_else(|| spec_err(n, "object field before object.shape"))?;
            match (field, &mut obj.shape) {
                ("width", Shape::Rect { width, .. }) => *width = one(value)?,
                ("height", Shape::Rect { height, .. }) => *height = one(value)?,
                ("radius", Shape::Disk { radius }) => *radius = one(value)?,
                ("center", _) => {
                    let c = floats(value, 2, n)?;
                    obj.center = Point2::new(c[0], c[1]);
                }
                ("density", _) => obj.density = one(value)?,
                ("motion", _) => obj.motion = motion(value, n)?,
                _ => return Err(spec_err(n, format!("unknown or mismatched key '{key}'"))),
            }
            continue;
        }
        let int = |v: &str| v.parse::<u64>().map_err(|_| spec_err(n, format!("invalid integer '{v}'")));
        match key {
            "width" => spec.width = int(value)? as u32,
            "height" => spec.height = int(value)? as u32,
            "duration" => spec.duration = one(value)?,
            "contrast_threshold" => spec.contrast_threshold = one(value)?,
            "seed" => spec.seed = int(value)?,
            "background.density" => spec.background.density = one(value)?,
            "background.motion" => spec.background.motion = motion(value, n)?,
            _ => return Err(spec_err(n, format!("unknown key '{key}'"))),
        }
    }
    Ok(spec)
}

pub fn scene_spec_to_text(s: &SceneSpec) -> String {
    let m = |m: &FourParamMotion| format!("{} {} {} {}", m.m_u, m.m_v, m.m_s, m.m_theta);
    let mut out = format!(
        "width={}\nheight={}\nduration={}\ncontrast_threshold={}\nseed={}\nbackground.density={}\nbackground.motion={}\n",
        s.width,
        s.height,
        s.duration,
        s.contrast_threshold,
        s.seed,
        s.background.density,
        m(&s.background.motion)
    );
    for o in &s.objects {
        match o.shape {
            Shape::Rect { width, height } => {
                out += &format!("object.shape=rect\nobject.width={width}\nobject.height={height}\n")
            }
            Shape::Disk { radius } => out += &format!("object.shape=disk\nobject.radius={radius}\n"),
        }
        out += &format!(
            "object.center={} {}\nobject.density={}\nobject.motion={}\n",
            o.center.x,
            o.center.y,
            o.density,
            m(&o.motion)
        );
    }
    out
}
