//! Extended-XYZ reading and writing.
//!
//! The comment line carries `energy=`, `total_charge=`, `spin=` and a
//! `Properties=` column declaration. Floats are written with 17
//! significant digits so that `write(parse(write(x)))` reproduces the
//! first write byte for byte.

use std::fmt::Write as _;

use super::elements;
use super::system::AtomicSystem;
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Column {
    Species,
    Position,
    Force,
    Charge,
    Skip(usize),
}

impl Column {
    fn width(self) -> usize {
        match self {
            Column::Species | Column::Charge => 1,
            Column::Position | Column::Force => 3,
            Column::Skip(n) => n,
        }
    }
}

fn parse_properties(spec: &str, frame: usize) -> Result<Vec<Column>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() % 3 != 0 {
        return Err(Error::Parse {
            frame,
            message: format!("malformed Properties declaration `{spec}`"),
        });
    }
    parts
        .chunks(3)
        .map(|c| {
            let width: usize = c[2].parse().map_err(|_| Error::Parse {
                frame,
                message: format!("bad column width in `{}`", c.join(":")),
            })?;
            let col = match (c[0].to_ascii_lowercase().as_str(), width) {
                ("species", 1) => Column::Species,
                ("pos", 3) => Column::Position,
                ("forces" | "force", 3) => Column::Force,
                ("charges" | "charge" | "initial_charges" | "q", 1) => Column::Charge,
                _ => Column::Skip(width),
            };
            Ok(col)
        })
        .collect()
}

/// Splits `key=value key2="quoted value"` pairs; bare words are ignored.
fn parse_comment(line: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        if chars.peek().is_none() {
            break;
        }
        let mut key = String::new();
        while let Some(&c) = chars.peek() {
            if c == '=' || c.is_whitespace() {
                break;
            }
            key.push(c);
            chars.next();
        }
        if chars.peek() != Some(&'=') {
            continue;
        }
        chars.next();
        let mut value = String::new();
        if chars.peek() == Some(&'"') {
            chars.next();
            for c in chars.by_ref() {
                if c == '"' {
                    break;
                }
                value.push(c);
            }
        } else {
            while let Some(&c) = chars.peek() {
                if c.is_whitespace() {
                    break;
                }
                value.push(c);
                chars.next();
            }
        }
        out.push((key, value));
    }
    out
}

fn default_columns(width: usize) -> Vec<Column> {
    use Column::*;
    match width {
        5 => vec![Species, Position, Charge],
        7 => vec![Species, Position, Force],
        8 => vec![Species, Position, Force, Charge],
        _ => vec![Species, Position, Skip(width.saturating_sub(4))],
    }
}

/// Parses every frame of an extended-XYZ document.
pub fn parse_extxyz(text: &str) -> Result<Vec<AtomicSystem>> {
    let mut lines = text.lines().peekable();
    let mut frames = Vec::new();
    loop {
        while lines.peek().is_some_and(|l| l.trim().is_empty()) {
            lines.next();
        }
        let Some(count_line) = lines.next() else { break };
        let frame = frames.len();
        let n: usize = count_line.trim().parse().map_err(|_| Error::Parse {
            frame,
            message: format!("expected an atom count, found `{}`", count_line.trim()),
        })?;
        let comment = lines.next().ok_or_else(|| Error::Parse {
            frame,
            message: "missing comment line".into(),
        })?;
        frames.push(parse_frame(n, comment, &mut lines, frame)?);
    }
    Ok(frames)
}

fn parse_frame<'a>(
    n: usize,
    comment: &str,
    lines: &mut std::iter::Peekable<impl Iterator<Item = &'a str>>,
    frame: usize,
) -> Result<AtomicSystem> {
    let perr = |message: String| Error::Parse { frame, message };
    let mut system = AtomicSystem::new(Vec::with_capacity(n), Vec::with_capacity(n));
    let mut columns = None;
    for (key, value) in parse_comment(comment) {
        let float = |v: &str| v.parse::<f64>().map_err(|_| perr(format!("bad value `{v}` for `{key}`")));
        match key.to_ascii_lowercase().as_str() {
            "energy" => system.energy = Some(float(&value)?),
            "total_charge" => system.total_charge = float(&value)?,
            "spin" => {
                system.spin = value
                    .parse()
                    .map_err(|_| perr(format!("bad spin `{value}`")))?
            }
            "properties" => columns = Some(parse_properties(&value, frame)?),
            _ => {}
        }
    }

    let mut forces = Vec::new();
    let mut charges = Vec::new();
    for k in 0..n {
        let line = lines.next().ok_or_else(|| {
            perr(format!(
                "header declares {n} atoms but only {k} atom lines were found"
            ))
        })?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() == 1 && tokens[0].parse::<usize>().is_ok() {
            return Err(perr(format!(
                "header declares {n} atoms but only {k} atom lines were found"
            )));
        }
        let cols = columns.get_or_insert_with(|| default_columns(tokens.len()));
        let width: usize = cols.iter().map(|c| c.width()).sum();
        if tokens.len() != width {
            return Err(perr(format!(
                "atom line {k} has {} columns, expected {width}",
                tokens.len()
            )));
        }
        let mut at = 0;
        let mut has_species = false;
        let mut has_pos = false;
        for &col in cols.iter() {
            let slice = &tokens[at..at + col.width()];
            at += col.width();
            let num = |s: &str| s.parse::<f64>().map_err(|_| perr(format!("atom line {k}: bad number `{s}`")));
            match col {
                Column::Species => {
                    let z = elements::atomic_number(slice[0])
                        .or_else(|| slice[0].parse::<u8>().ok().filter(|&z| z > 0))
                        .ok_or_else(|| perr(format!("atom line {k}: unknown element `{}`", slice[0])))?;
                    system.atomic_numbers.push(z);
                    has_species = true;
                }
                Column::Position => {
                    system.positions.push([num(slice[0])?, num(slice[1])?, num(slice[2])?]);
                    has_pos = true;
                }
                Column::Force => forces.push([num(slice[0])?, num(slice[1])?, num(slice[2])?]),
                Column::Charge => charges.push(num(slice[0])?),
                Column::Skip(_) => {}
            }
        }
        if !has_species || !has_pos {
            return Err(perr("Properties must declare species and pos".into()));
        }
    }
    if !forces.is_empty() {
        system.forces = Some(forces);
    }
    if !charges.is_empty() {
        system.per_atom_charges = Some(charges);
    }
    system.validate().map_err(|e| perr(e.to_string()))?;
    Ok(system)
}

fn write_float(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").unwrap();
}

/// Serializes frames; the output parses back to identical values.
pub fn write_extxyz(systems: &[AtomicSystem]) -> String {
    let mut out = String::new();
    for s in systems {
        writeln!(out, "{}", s.len()).unwrap();
        if let Some(e) = s.energy {
            out.push_str("energy=");
            write_float(&mut out, e);
            out.push(' ');
        }
        out.push_str("total_charge=");
        if s.total_charge.fract() == 0.0 && s.total_charge.abs() < 1e15 {
            write!(out, "{}", s.total_charge as i64).unwrap();
        } else {
            write_float(&mut out, s.total_charge);
        }
        write!(out, " spin={} Properties=species:S:1:pos:R:3", s.spin).unwrap();
        if s.forces.is_some() {
            out.push_str(":forces:R:3");
        }
        if s.per_atom_charges.is_some() {
            out.push_str(":charges:R:1");
        }
        out.push('\n');
        for i in 0..s.len() {
            let z = s.atomic_numbers[i];
            match elements::symbol(z) {
                Some(sym) => out.push_str(sym),
                None => write!(out, "{z}").unwrap(),
            }
            let mut row: Vec<f64> = s.positions[i].to_vec();
            if let Some(f) = &s.forces {
                row.extend_from_slice(&f[i]);
            }
            if let Some(q) = &s.per_atom_charges {
                row.push(q[i]);
            }
            for v in row {
                out.push(' ');
                write_float(&mut out, v);
            }
            out.push('\n');
        }
    }
    out
}

pub fn read_extxyz(path: &std::path::Path) -> Result<Vec<AtomicSystem>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_extxyz(&text)
}

pub fn save_extxyz(path: &std::path::Path, systems: &[AtomicSystem]) -> Result<()> {
    std::fs::write(path, write_extxyz(systems)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_atom_frame() {
        let systems = parse_extxyz("1\nenergy=0\nH 0 0 0\n").unwrap();
        assert_eq!(systems.len(), 1);
        assert_eq!(systems[0].len(), 1);
        assert_eq!(systems[0].atomic_numbers, vec![1]);
        assert_eq!(systems[0].energy, Some(0.0));
    }

    #[test]
    fn short_frame_names_the_frame() {
        let text = "1\nenergy=1\nH 0 0 0\n3\nenergy=0\nH 0 0 0\nO 1 0 0\n";
        match parse_extxyz(text) {
            Err(Error::Parse { frame, message }) => {
                assert_eq!(frame, 1);
                assert!(message.contains("did not") || message.contains("declares 3 atoms"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        // a following frame's count line must not be swallowed as an atom
        let text = "3\nenergy=0\nH 0 0 0\nO 1 0 0\n1\nenergy=0\nH 0 0 0\n";
        assert!(matches!(parse_extxyz(text), Err(Error::Parse { frame: 0, .. })));
    }

    #[test]
    fn reads_attributes_and_optional_columns() {
        let text = "2\nenergy=-1.5 total_charge=-1 spin=1 Properties=species:S:1:pos:R:3:forces:R:3:charges:R:1\n\
                    O 0 0 0 0.1 0.2 0.3 -0.6\nH 1 0 0 -0.1 -0.2 -0.3 -0.4\n";
        let s = &parse_extxyz(text).unwrap()[0];
        assert_eq!(s.total_charge, -1.0);
        assert_eq!(s.spin, 1);
        assert_eq!(s.forces.as_ref().unwrap()[1], [-0.1, -0.2, -0.3]);
        assert_eq!(s.per_atom_charges.as_ref().unwrap(), &vec![-0.6, -0.4]);
    }

    #[test]
    fn plain_columns_are_inferred() {
        let s = &parse_extxyz("2\n\nC 0 0 0 1 1 1\nH 1.1 0 0 2 2 2\n").unwrap()[0];
        assert_eq!(s.forces.as_ref().unwrap()[0], [1.0, 1.0, 1.0]);
        assert!(parse_extxyz("1\n\nH 0 0\n").is_err());
        assert!(parse_extxyz("1\n\nQq 0 0 0\n").is_err());
    }

    fn random_corpus(frames: usize) -> Vec<AtomicSystem> {
        let mut rng = ChaCha8Rng::seed_from_u64(100);
        (0..frames)
            .map(|f| {
                let n = rng.random_range(1..8);
                let mut s = AtomicSystem::new(
                    (0..n).map(|_| [1u8, 6, 7, 8, 47][rng.random_range(0..5)]).collect(),
                    (0..n)
                        .map(|i| [i as f64 * 1.3 + rng.random::<f64>(), rng.random(), rng.random::<f64>() * 1e-3])
                        .collect(),
                )
                .with_charge([0.0, 1.0, -1.0, 0.25][f % 4])
                .with_spin((f % 2) as u8);
                if f % 3 != 0 {
                    s.energy = Some(rng.random_range(-1e3..1e3));
                }
                if f % 2 == 0 {
                    s.forces = Some((0..n).map(|_| [rng.random(), -rng.random::<f64>(), 1e-20]).collect());
                }
                if f % 5 == 0 {
                    s.per_atom_charges = Some((0..n).map(|_| rng.random_range(-1.0..1.0)).collect());
                }
                s
            })
            .collect()
    }

    #[test]
    fn write_parse_write_is_a_fixpoint() {
        let corpus = random_corpus(100);
        let first = write_extxyz(&corpus);
        let parsed = parse_extxyz(&first).unwrap();
        assert_eq!(parsed, corpus);
        let second = write_extxyz(&parsed);
        assert_eq!(first, second);
    }
}
