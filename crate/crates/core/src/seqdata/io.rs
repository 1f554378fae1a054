//! FASTA and TSV readers/writers.
//!
//! FASTA: `>` header (id = first whitespace-delimited token), wrapped body
//! lines. Annotations TSV: `gene_id genome_id start end strand region
//! essential`. Variants TSV: `gene_id position ref alt fitness`. All TSVs
//! are UTF-8, tab-delimited; `#` comment lines are ignored. Parsers fail
//! with a located error; nothing is silently truncated.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{
    encode_sequence, AmbiguityPolicy, GeneAnnotation, NucleotideSequence, RegionLabel, Result,
    SeqError, Strand, VariantRecord,
};

const FASTA_WRAP: usize = 60;

fn parse_err<V>(line: usize, reason: impl Into<String>) -> Result<V> {
    Err(SeqError::Parse {
        line,
        reason: reason.into(),
    })
}

/// Reads every record of a FASTA file, concatenating wrapped body lines.
pub fn read_fasta(path: &Path, policy: AmbiguityPolicy) -> Result<Vec<NucleotideSequence>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    let mut current: Option<(String, String, usize)> = None; // id, body, header line
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim_end();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('>') {
            if let Some((id, body, at)) = current.take() {
                if body.is_empty() {
                    return parse_err(at, format!("record {id} has no sequence"));
                }
                out.push(encode_record(&id, &body, at, policy)?);
            }
            let id = rest
                .split_whitespace()
                .next()
                .map(str::to_string)
                .unwrap_or_default();
            if id.is_empty() {
                return parse_err(lineno, "empty FASTA header");
            }
            current = Some((id, String::new(), lineno));
        } else {
            match current.as_mut() {
                Some((_, body, _)) => body.push_str(trimmed),
                None => return parse_err(lineno, "sequence data before any header"),
            }
        }
    }
    if let Some((id, body, at)) = current {
        if body.is_empty() {
            return parse_err(at, format!("record {id} has no sequence"));
        }
        out.push(encode_record(&id, &body, at, policy)?);
    }
    if out.is_empty() {
        return parse_err(0, "no FASTA records found");
    }
    Ok(out)
}

fn encode_record(
    id: &str,
    body: &str,
    at: usize,
    policy: AmbiguityPolicy,
) -> Result<NucleotideSequence> {
    encode_sequence(id, body, policy).map_err(|e| match e {
        SeqError::Ambiguity { positions } => SeqError::Parse {
            line: at,
            reason: format!(
                "record {id} has {} ambiguous base(s), first at sequence offset {}",
                positions.len(),
                positions[0]
            ),
        },
        other => other,
    })
}

/// Writes sequences as FASTA with 60-column wrapped bodies.
pub fn write_fasta(path: &Path, seqs: &[NucleotideSequence]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in seqs {
        writeln!(w, ">{}", s.id)?;
        let text = s.decode();
        for chunk in text.as_bytes().chunks(FASTA_WRAP) {
            w.write_all(chunk)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

fn data_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let t = line.trim_end();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push((lineno + 1, t.to_string()));
    }
    Ok(out)
}

fn expect_header(lines: &[(usize, String)], expected: &[&str]) -> Result<()> {
    match lines.first() {
        Some((lineno, line)) => {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols != expected {
                parse_err(
                    *lineno,
                    format!("expected header {:?}, got {:?}", expected.join("\t"), line),
                )
            } else {
                Ok(())
            }
        }
        None => parse_err(0, "empty file"),
    }
}

const ANNOT_HEADER: [&str; 7] = [
    "gene_id", "genome_id", "start", "end", "strand", "region", "essential",
];

/// Reads a gene annotation table. Returns the rows plus validation warnings
/// (e.g. coding regions whose length is not a codon multiple); warnings are
/// reported, not rejected.
pub fn read_annotations(path: &Path) -> Result<(Vec<GeneAnnotation>, Vec<String>)> {
    let lines = data_lines(path)?;
    expect_header(&lines, &ANNOT_HEADER)?;
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for (lineno, line) in &lines[1..] {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != ANNOT_HEADER.len() {
            return parse_err(*lineno, format!("expected {} columns, got {}", ANNOT_HEADER.len(), cols.len()));
        }
        let start: usize = cols[2]
            .parse()
            .map_err(|_| SeqError::Parse { line: *lineno, reason: format!("bad start '{}'", cols[2]) })?;
        let end: usize = cols[3]
            .parse()
            .map_err(|_| SeqError::Parse { line: *lineno, reason: format!("bad end '{}'", cols[3]) })?;
        if end <= start {
            return parse_err(*lineno, format!("end {end} must exceed start {start}"));
        }
        let strand = Strand::parse(cols[4])
            .ok_or_else(|| SeqError::Parse { line: *lineno, reason: format!("bad strand '{}'", cols[4]) })?;
        let region_label = RegionLabel::parse(cols[5])
            .ok_or_else(|| SeqError::Parse { line: *lineno, reason: format!("unknown region '{}'", cols[5]) })?;
        let essential = match cols[6] {
            "" | "NA" | "na" => None,
            "1" | "true" => Some(true),
            "0" | "false" => Some(false),
            other => {
                return parse_err(*lineno, format!("bad essential flag '{other}'"));
            }
        };
        if region_label == RegionLabel::Coding && (end - start) % 3 != 0 {
            warnings.push(format!(
                "line {lineno}: coding region {} has length {} not divisible by 3",
                cols[0],
                end - start
            ));
        }
        out.push(GeneAnnotation {
            gene_id: cols[0].to_string(),
            genome_id: cols[1].to_string(),
            start,
            end,
            strand,
            region_label,
            essential,
        });
    }
    Ok((out, warnings))
}

pub fn write_annotations(path: &Path, rows: &[GeneAnnotation]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", ANNOT_HEADER.join("\t"))?;
    for r in rows {
        let essential = match r.essential {
            None => "NA".to_string(),
            Some(true) => "1".to_string(),
            Some(false) => "0".to_string(),
        };
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.gene_id,
            r.genome_id,
            r.start,
            r.end,
            r.strand.symbol(),
            r.region_label.as_str(),
            essential
        )?;
    }
    w.flush()?;
    Ok(())
}

const VARIANT_HEADER: [&str; 5] = ["gene_id", "position", "ref", "alt", "fitness"];

pub fn read_variants(path: &Path) -> Result<Vec<VariantRecord>> {
    let lines = data_lines(path)?;
    expect_header(&lines, &VARIANT_HEADER)?;
    let mut out = Vec::new();
    for (lineno, line) in &lines[1..] {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != VARIANT_HEADER.len() {
            return parse_err(*lineno, format!("expected {} columns, got {}", VARIANT_HEADER.len(), cols.len()));
        }
        let position: usize = cols[1]
            .parse()
            .map_err(|_| SeqError::Parse { line: *lineno, reason: format!("bad position '{}'", cols[1]) })?;
        let base = |s: &str, what: &str| -> Result<char> {
            let mut chars = s.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) if "ACGTacgt".contains(c) => Ok(c.to_ascii_uppercase()),
                _ => parse_err(*lineno, format!("bad {what} base '{s}'")),
            }
        };
        let ref_base = base(cols[2], "ref")?;
        let alt_base = base(cols[3], "alt")?;
        if ref_base == alt_base {
            return parse_err(*lineno, format!("ref and alt are both '{ref_base}'"));
        }
        let fitness: f64 = cols[4]
            .parse()
            .map_err(|_| SeqError::Parse { line: *lineno, reason: format!("bad fitness '{}'", cols[4]) })?;
        out.push(VariantRecord {
            gene_id: cols[0].to_string(),
            position,
            ref_base,
            alt_base,
            fitness,
        });
    }
    Ok(out)
}

pub fn write_variants(path: &Path, rows: &[VariantRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", VARIANT_HEADER.join("\t"))?;
    for r in rows {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            r.gene_id, r.position, r.ref_base, r.alt_base, r.fitness
        )?;
    }
    w.flush()?;
    Ok(())
}
