//! Line-oriented scene text format.
//!
//! ```text
//! uncmap-scene 1
//! seed <u64>
//! ego <x> <y> <heading_rad>
//! element <id> <class> <n>          # class: boundary | divider | ped_crossing | centerline
//! <x> <y>                           # n vertex lines
//! agent <id>
//! history <n>
//! <x> <y>                           # n lines, 0.1 s apart, oldest first
//! future <n>
//! <x> <y>
//! observations <n>                  # optional section, datasets only
//! obs <element_id> <vertex_index> <observed_class> <u> <v> <ctx_0> ... <ctx_9>
//! end
//! ```
//!
//! Coordinates are decimal meters written with exactly nine fractional
//! digits; observation positions and context values are unitless and use the
//! same precision. Blank lines and `#` comments are ignored on input.
//! Emitting a parsed document reproduces it byte for byte.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::noise_sim::{Observation, CONTEXT_WIDTH};

use super::{AgentTrack, EgoPose, ElementClass, MapElement, Point2, Scene, Trajectory};

const MAGIC: &str = "uncmap-scene 1";

/// A scene together with its (possibly empty) observation stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scene: Scene,
    pub observations: Vec<Observation>,
}

fn num(out: &mut String, v: f64) {
    // `{:.9}` of -0.0 prints "-0.000000000"; normalize so emission is canonical.
    let v = if v == 0.0 { 0.0 } else { v };
    write!(out, "{v:.9}").unwrap();
}

fn point_line(out: &mut String, p: Point2) {
    num(out, p.x);
    out.push(' ');
    num(out, p.y);
    out.push('\n');
}

pub fn emit_scene(scene: &Scene) -> String {
    emit(scene, None)
}

pub fn emit_dataset(dataset: &Dataset) -> String {
    emit(&dataset.scene, Some(&dataset.observations))
}

fn emit(scene: &Scene, observations: Option<&[Observation]>) -> String {
    let mut out = String::new();
    out.push_str(MAGIC);
    out.push('\n');
    writeln!(out, "seed {}", scene.seed).unwrap();
    out.push_str("ego ");
    num(&mut out, scene.ego_pose.position.x);
    out.push(' ');
    num(&mut out, scene.ego_pose.position.y);
    out.push(' ');
    num(&mut out, scene.ego_pose.heading);
    out.push('\n');
    for e in &scene.elements {
        writeln!(out, "element {} {} {}", e.id, e.class, e.points.len()).unwrap();
        for &p in &e.points {
            point_line(&mut out, p);
        }
    }
    for a in &scene.agents {
        writeln!(out, "agent {}", a.id).unwrap();
        writeln!(out, "history {}", a.history.samples.len()).unwrap();
        for &p in &a.history.samples {
            point_line(&mut out, p);
        }
        writeln!(out, "future {}", a.future.samples.len()).unwrap();
        for &p in &a.future.samples {
            point_line(&mut out, p);
        }
    }
    if let Some(obs) = observations {
        writeln!(out, "observations {}", obs.len()).unwrap();
        for o in obs {
            write!(
                out,
                "obs {} {} {} ",
                o.element_id, o.vertex_index, o.observed_class
            )
            .unwrap();
            num(&mut out, o.position.x);
            out.push(' ');
            num(&mut out, o.position.y);
            for &c in &o.context {
                out.push(' ');
                num(&mut out, c);
            }
            out.push('\n');
        }
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
            last: 0,
        }
    }

    /// Next meaningful line, split into whitespace tokens.
    fn next_tokens(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for (i, raw) in self.inner.by_ref() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.last = i + 1;
            return Some((i + 1, line.split_whitespace().collect()));
        }
        None
    }

    fn expect_tokens(&mut self, what: &str) -> Result<(usize, Vec<&'a str>)> {
        self.next_tokens()
            .ok_or_else(|| Error::parse(self.last + 1, format!("unexpected end of input, expected {what}")))
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, tok: &str, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::parse(line, format!("invalid {what} `{tok}`")))
}

fn parse_f64(line: usize, tok: &str) -> Result<f64> {
    let v: f64 = parse_num(line, tok, "number")?;
    if !v.is_finite() {
        return Err(Error::parse(line, format!("non-finite number `{tok}`")));
    }
    Ok(v)
}

fn expect_arity(line: usize, toks: &[&str], n: usize) -> Result<()> {
    if toks.len() != n {
        return Err(Error::parse(
            line,
            format!("`{}` expects {} fields, got {}", toks[0], n - 1, toks.len() - 1),
        ));
    }
    Ok(())
}

fn parse_points(lines: &mut Lines<'_>, n: usize) -> Result<Vec<Point2>> {
    (0..n)
        .map(|_| {
            let (ln, toks) = lines.expect_tokens("a vertex line")?;
            if toks.len() != 2 {
                return Err(Error::parse(ln, "vertex line needs exactly two numbers"));
            }
            Ok(Point2::new(parse_f64(ln, toks[0])?, parse_f64(ln, toks[1])?))
        })
        .collect()
}

fn parse_counted_header(lines: &mut Lines<'_>, keyword: &str) -> Result<usize> {
    let (ln, toks) = lines.expect_tokens(keyword)?;
    if toks[0] != keyword {
        return Err(Error::parse(ln, format!("expected `{keyword}`, found `{}`", toks[0])));
    }
    expect_arity(ln, &toks, 2)?;
    parse_num(ln, toks[1], "count")
}

pub fn parse_scene(text: &str) -> Result<Scene> {
    parse_dataset(text).map(|d| d.scene)
}

pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut lines = Lines::new(text);
    let (ln, toks) = lines.expect_tokens("header")?;
    if toks.join(" ") != MAGIC {
        return Err(Error::parse(ln, format!("expected header `{MAGIC}`")));
    }
    let (ln, toks) = lines.expect_tokens("seed")?;
    if toks[0] != "seed" {
        return Err(Error::parse(ln, "expected `seed`"));
    }
    expect_arity(ln, &toks, 2)?;
    let seed = parse_num(ln, toks[1], "seed")?;
    let (ln, toks) = lines.expect_tokens("ego")?;
    if toks[0] != "ego" {
        return Err(Error::parse(ln, "expected `ego`"));
    }
    expect_arity(ln, &toks, 4)?;
    let ego_pose = EgoPose {
        position: Point2::new(parse_f64(ln, toks[1])?, parse_f64(ln, toks[2])?),
        heading: parse_f64(ln, toks[3])?,
    };

    let mut scene = Scene {
        seed,
        ego_pose,
        elements: Vec::new(),
        agents: Vec::new(),
    };
    let mut observations = Vec::new();
    let mut finished = false;
    while let Some((ln, toks)) = lines.next_tokens() {
        match toks[0] {
            "element" => {
                expect_arity(ln, &toks, 4)?;
                let id = parse_num(ln, toks[1], "element id")?;
                let class: ElementClass = toks[2]
                    .parse()
                    .map_err(|_| Error::parse(ln, format!("unknown class `{}`", toks[2])))?;
                let n = parse_num(ln, toks[3], "vertex count")?;
                let points = parse_points(&mut lines, n)?;
                scene.elements.push(MapElement { id, class, points });
            }
            "agent" => {
                expect_arity(ln, &toks, 2)?;
                let id = parse_num(ln, toks[1], "agent id")?;
                let nh = parse_counted_header(&mut lines, "history")?;
                let history = parse_points(&mut lines, nh)?;
                let nf = parse_counted_header(&mut lines, "future")?;
                let future = parse_points(&mut lines, nf)?;
                scene.agents.push(AgentTrack {
                    id,
                    history: Trajectory {
                        agent_id: id,
                        samples: history,
                    },
                    future: Trajectory {
                        agent_id: id,
                        samples: future,
                    },
                });
            }
            "observations" => {
                expect_arity(ln, &toks, 2)?;
                let n: usize = parse_num(ln, toks[1], "observation count")?;
                observations.reserve(n);
                for _ in 0..n {
                    let (ln, toks) = lines.expect_tokens("an obs line")?;
                    if toks[0] != "obs" {
                        return Err(Error::parse(ln, "expected `obs`"));
                    }
                    expect_arity(ln, &toks, 6 + CONTEXT_WIDTH)?;
                    let observed_class: ElementClass = toks[3]
                        .parse()
                        .map_err(|_| Error::parse(ln, format!("unknown class `{}`", toks[3])))?;
                    let mut context = [0.0; CONTEXT_WIDTH];
                    for (slot, tok) in context.iter_mut().zip(&toks[6..]) {
                        *slot = parse_f64(ln, tok)?;
                    }
                    observations.push(Observation {
                        element_id: parse_num(ln, toks[1], "element id")?,
                        vertex_index: parse_num(ln, toks[2], "vertex index")?,
                        observed_class,
                        position: Point2::new(parse_f64(ln, toks[4])?, parse_f64(ln, toks[5])?),
                        context,
                    });
                }
            }
            "end" => {
                expect_arity(ln, &toks, 1)?;
                finished = true;
                break;
            }
            other => return Err(Error::parse(ln, format!("unknown record `{other}`"))),
        }
    }
    if !finished {
        return Err(Error::parse(lines.last + 1, "missing `end`"));
    }
    if let Some((ln, _)) = lines.next_tokens() {
        return Err(Error::parse(ln, "content after `end`"));
    }
    Ok(Dataset {
        scene,
        observations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map_model::{validate_scene, Violation};

    const SAMPLE: &str = "uncmap-scene 1
seed 7
ego 0.000000000 0.000000000 0.000000000
element 0 boundary 2
-30.000000000 -7.000000000
30.000000000 -7.000000000
element 1 ped_crossing 2
1.500000000 -3.250000000
1.500000000 3.250000000
end
";

    #[test]
    fn canonical_text_round_trips_byte_for_byte() {
        let scene = parse_scene(SAMPLE).unwrap();
        assert_eq!(scene.elements.len(), 2);
        assert_eq!(scene.elements[1].class, ElementClass::PedCrossing);
        assert_eq!(emit_scene(&scene), SAMPLE);
        assert_eq!(parse_scene(&emit_scene(&scene)).unwrap(), scene);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = SAMPLE.replace("seed 7\n", "# generated\n\nseed 7   # master\n");
        assert_eq!(parse_scene(&text).unwrap(), parse_scene(SAMPLE).unwrap());
    }

    #[test]
    fn short_history_parses_and_is_flagged_by_validation() {
        let mut text = SAMPLE.replace("end\n", "agent 3\nhistory 19\n");
        for _ in 0..19 {
            text.push_str("0.000000000 0.000000000\n");
        }
        text.push_str("future 30\n");
        for _ in 0..30 {
            text.push_str("1.000000000 0.000000000\n");
        }
        text.push_str("end\n");
        let scene = parse_scene(&text).unwrap();
        assert_eq!(
            validate_scene(&scene),
            vec![Violation::HistoryLength {
                agent_id: 3,
                expected: 20,
                actual: 19
            }]
        );
        assert_eq!(emit_scene(&scene), text);
    }

    #[test]
    fn malformed_inputs_report_line_numbers() {
        let bad_class = SAMPLE.replace("boundary", "road");
        match parse_scene(&bad_class) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_scene(&SAMPLE.replace("end\n", "")).is_err());
        assert!(parse_scene(&SAMPLE.replace("30.000000000 -7", "nan -7")).is_err());
        assert!(parse_scene("not a scene\n").is_err());
        assert!(parse_scene(&format!("{SAMPLE}seed 3\n")).is_err());
    }
}
