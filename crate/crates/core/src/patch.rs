//! Unified-diff application for `file_patch` proposals.
//!
//! Hunks must match exactly at the position their header names; there is no
//! fuzz and no offset search. `--- `/`+++ `/`diff ` header lines are ignored.
//! `\ No newline at end of file` is honored on both sides.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatchError {
    #[error("malformed patch at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("hunk {hunk} does not apply at original line {at}: {reason}")]
    HunkMismatch {
        hunk: usize,
        at: usize,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Line {
    op: u8,
    text: String,
    newline: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Hunk {
    old_start: usize,
    old_len: usize,
    new_start: usize,
    new_len: usize,
    lines: Vec<Line>,
}

fn parse_range(s: &str) -> Option<(usize, usize)> {
    match s.split_once(',') {
        Some((a, b)) => Some((a.parse().ok()?, b.parse().ok()?)),
        None => Some((s.parse().ok()?, 1)),
    }
}

fn parse_header(line: &str) -> Option<(usize, usize, usize, usize)> {
    let rest = line.strip_prefix("@@ -")?;
    let (ranges, _) = rest.split_once(" @@")?;
    let (old, new) = ranges.split_once(" +")?;
    let (a, b) = parse_range(old)?;
    let (c, d) = parse_range(new)?;
    Some((a, b, c, d))
}

fn parse(patch: &str) -> Result<Vec<Hunk>, PatchError> {
    let malformed = |line: usize, reason: &str| PatchError::Malformed {
        line,
        reason: reason.to_owned(),
    };
    let mut hunks: Vec<Hunk> = Vec::new();
    let raw: Vec<&str> = patch.split_inclusive('\n').collect();
    let mut i = 0;
    while i < raw.len() {
        let line = raw[i].trim_end_matches('\n');
        let number = i + 1;
        i += 1;
        if hunks.is_empty() && !line.starts_with("@@") {
            if line.starts_with("--- ")
                || line.starts_with("+++ ")
                || line.starts_with("diff ")
                || line.starts_with("index ")
            {
                continue;
            }
            return Err(malformed(number, "expected a hunk header"));
        }
        let Some((old_start, old_len, new_start, new_len)) = parse_header(line) else {
            return Err(malformed(number, "bad hunk header"));
        };
        let mut hunk = Hunk {
            old_start,
            old_len,
            new_start,
            new_len,
            lines: Vec::new(),
        };
        let (mut old_seen, mut new_seen) = (0, 0);
        while (old_seen < old_len || new_seen < new_len) && i < raw.len() {
            let text = raw[i];
            let number = i + 1;
            i += 1;
            let op = *text.as_bytes().first().unwrap_or(&b' ');
            if op == b'\\' {
                match hunk.lines.last_mut() {
                    Some(last) => last.newline = false,
                    None => {
                        return Err(malformed(
                            number,
                            "no-newline marker without a preceding line",
                        ))
                    }
                }
                continue;
            }
            // A bare LF is an empty context line, as some producers emit it.
            let body = if text == "\n" {
                ""
            } else {
                &text[1.min(text.len())..]
            };
            let (body, newline) = match body.strip_suffix('\n') {
                Some(b) => (b, true),
                None => (body, false),
            };
            match op {
                b' ' | b'\n' => {
                    old_seen += 1;
                    new_seen += 1;
                }
                b'-' => old_seen += 1,
                b'+' => new_seen += 1,
                _ => {
                    return Err(malformed(
                        number,
                        "line does not start with ' ', '-', '+' or '\\'",
                    ))
                }
            }
            let op = if op == b'\n' { b' ' } else { op };
            hunk.lines.push(Line {
                op,
                text: body.to_owned(),
                newline,
            });
        }
        if old_seen != old_len || new_seen != new_len {
            return Err(malformed(
                number,
                "hunk body is shorter or longer than its header",
            ));
        }
        if i < raw.len() && raw[i].starts_with('\\') {
            if let Some(last) = hunk.lines.last_mut() {
                last.newline = false;
            }
            i += 1;
        }
        hunks.push(hunk);
    }
    if hunks.is_empty() {
        return Err(malformed(1, "patch has no hunks"));
    }
    Ok(hunks)
}

fn split_lines(text: &str) -> Vec<(&str, bool)> {
    text.split_inclusive('\n')
        .map(|l| match l.strip_suffix('\n') {
            Some(b) => (b, true),
            None => (l, false),
        })
        .collect()
}

fn render(lines: &[(String, bool)]) -> String {
    let mut out = String::new();
    for (text, newline) in lines {
        out.push_str(text);
        if *newline {
            out.push('\n');
        }
    }
    out
}

/// Apply `patch` to `original` (`None` for a file that does not exist yet).
pub fn apply_patch(original: Option<&str>, patch: &str) -> Result<String, PatchError> {
    apply_hunks(original.unwrap_or(""), &parse(patch)?)
}

/// Undo `patch` on its own output.
pub fn reverse_patch(patched: &str, patch: &str) -> Result<String, PatchError> {
    let hunks: Vec<Hunk> = parse(patch)?
        .into_iter()
        .map(|h| Hunk {
            old_start: h.new_start,
            old_len: h.new_len,
            new_start: h.old_start,
            new_len: h.old_len,
            lines: h
                .lines
                .into_iter()
                .map(|l| Line {
                    op: match l.op {
                        b'-' => b'+',
                        b'+' => b'-',
                        op => op,
                    },
                    ..l
                })
                .collect(),
        })
        .collect();
    apply_hunks(patched, &hunks)
}

fn apply_hunks(original: &str, hunks: &[Hunk]) -> Result<String, PatchError> {
    let src = split_lines(original);
    let mut out: Vec<(String, bool)> = Vec::with_capacity(src.len());
    let mut cursor = 0;
    for (n, hunk) in hunks.iter().enumerate() {
        let hunk_no = n + 1;
        // `-k,0` inserts after line k; otherwise the hunk starts at line k.
        let at = if hunk.old_len == 0 {
            hunk.old_start
        } else {
            hunk.old_start.saturating_sub(1)
        };
        let mismatch = |reason: String| PatchError::HunkMismatch {
            hunk: hunk_no,
            at: at + 1,
            reason,
        };
        if at < cursor {
            return Err(mismatch("hunks overlap or are out of order".into()));
        }
        if at > src.len() {
            return Err(mismatch(format!("file has only {} lines", src.len())));
        }
        out.extend(src[cursor..at].iter().map(|(t, nl)| (t.to_string(), *nl)));
        let mut pos = at;
        for line in &hunk.lines {
            if line.op != b'+' {
                let Some(&(text, newline)) = src.get(pos) else {
                    return Err(mismatch(
                        "patch expects more lines than the file has".into(),
                    ));
                };
                if text != line.text || newline != line.newline {
                    return Err(mismatch(format!(
                        "expected {:?}, found {:?}",
                        line.text, text
                    )));
                }
                pos += 1;
            }
            if line.op != b'-' {
                out.push((line.text.clone(), line.newline));
            }
        }
        cursor = pos;
    }
    out.extend(src[cursor..].iter().map(|(t, nl)| (t.to_string(), *nl)));
    // A line that gained content after it must end in LF.
    let last = out.len().saturating_sub(1);
    for (i, (_, newline)) in out.iter().enumerate() {
        if !newline && i != last {
            return Err(PatchError::HunkMismatch {
                hunk: hunks.len(),
                at: i + 1,
                reason: "missing newline before end of file".into(),
            });
        }
    }
    Ok(render(&out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn creates_a_new_file() {
        assert_eq!(
            apply_patch(None, "@@ -0,0 +1,2 @@\n+a\n+b\n").unwrap(),
            "a\nb\n"
        );
        assert_eq!(
            apply_patch(None, "--- /dev/null\n+++ b/src/x\n@@ -0,0 +1 @@\n+x\n").unwrap(),
            "x\n"
        );
    }

    #[test]
    fn modifies_in_the_middle() {
        let patch = "@@ -2,3 +2,3 @@\n b\n-c\n+C\n d\n";
        assert_eq!(
            apply_patch(Some("a\nb\nc\nd\ne\n"), patch).unwrap(),
            "a\nb\nC\nd\ne\n"
        );
        assert_eq!(
            reverse_patch("a\nb\nC\nd\ne\n", patch).unwrap(),
            "a\nb\nc\nd\ne\n"
        );
    }

    #[test]
    fn honors_missing_trailing_newline() {
        let patch = "@@ -1 +1 @@\n-a\n\\ No newline at end of file\n+a\n";
        assert_eq!(apply_patch(Some("a"), patch).unwrap(), "a\n");
        assert!(apply_patch(Some("a\n"), patch).is_err());
    }

    #[test]
    fn context_mismatch_is_reported() {
        let err = apply_patch(Some("x\ny\n"), "@@ -1,2 +1,2 @@\n x\n-z\n+q\n").unwrap_err();
        assert!(
            matches!(err, PatchError::HunkMismatch { hunk: 1, at: 1, .. }),
            "{err}"
        );
    }

    #[test]
    fn malformed_patches_are_rejected() {
        assert!(matches!(
            apply_patch(None, ""),
            Err(PatchError::Malformed { .. })
        ));
        assert!(matches!(
            apply_patch(None, "hello\n"),
            Err(PatchError::Malformed { .. })
        ));
        assert!(matches!(
            apply_patch(None, "@@ -0,0 +1,2 @@\n+a\n"),
            Err(PatchError::Malformed { .. })
        ));
        assert!(matches!(
            apply_patch(None, "@@ -0,0 +1 @@\n*a\n"),
            Err(PatchError::Malformed { .. })
        ));
    }

    /// Build a unified diff for replacing `old[start..start+del]` with `ins`,
    /// with up to `ctx` lines of context on each side.
    fn make_patch(old: &[String], start: usize, del: usize, ins: &[String], ctx: usize) -> String {
        let lo = start.saturating_sub(ctx);
        let hi = (start + del + ctx).min(old.len());
        let old_len = hi - lo;
        let new_len = old_len - del + ins.len();
        let old_start = if old_len == 0 { lo } else { lo + 1 };
        let new_start = if new_len == 0 { lo } else { lo + 1 };
        let mut p = format!("@@ -{old_start},{old_len} +{new_start},{new_len} @@\n");
        for l in &old[lo..start] {
            p.push_str(&format!(" {l}\n"));
        }
        for l in &old[start..start + del] {
            p.push_str(&format!("-{l}\n"));
        }
        for l in ins {
            p.push_str(&format!("+{l}\n"));
        }
        for l in &old[start + del..hi] {
            p.push_str(&format!(" {l}\n"));
        }
        p
    }

    fn join(lines: &[String]) -> String {
        lines.iter().map(|l| format!("{l}\n")).collect()
    }

    proptest! {
        /// Applying a generated diff equals splicing the lines directly, and
        /// reversing it restores the original.
        #[test]
        fn patch_matches_direct_splice(
            old in prop::collection::vec("[a-c]{0,3}", 0..12),
            ins in prop::collection::vec("[a-c]{0,3}", 0..5),
            start_frac in 0.0f64..=1.0,
            del_frac in 0.0f64..=1.0,
            ctx in 0usize..4,
        ) {
            let start = (start_frac * old.len() as f64) as usize;
            let del = (del_frac * (old.len() - start) as f64) as usize;
            prop_assume!(del > 0 || !ins.is_empty());
            let patch = make_patch(&old, start, del, &ins, ctx);
            let mut expected = old.clone();
            expected.splice(start..start + del, ins.iter().cloned());
            let original = join(&old);
            let patched = apply_patch(Some(&original), &patch).unwrap();
            prop_assert_eq!(&patched, &join(&expected));
            prop_assert_eq!(reverse_patch(&patched, &patch).unwrap(), original);
        }
    }
}
