//! Python grammar profile.
//!
//! Not a parser: a line scanner that blanks string literals and comments,
//! joins continuation lines into logical lines, and pattern-matches the few
//! statement shapes the engine cares about (imports and `def` headers).

use super::{FunctionDef, GrammarProfile, ImportError, ImportKind, ImportRef};

#[derive(Debug, Clone, Copy, Default)]
pub struct PythonProfile;

impl GrammarProfile for PythonProfile {
    fn id(&self) -> &str {
        "python"
    }

    fn module_suffix(&self) -> &str {
        ".py"
    }

    fn extract_imports(&self, source: &str, strict: bool) -> Result<Vec<ImportRef>, ImportError> {
        let mut out = Vec::new();
        for logical in logical_lines(source) {
            for stmt in logical.text.split(';').map(str::trim) {
                match parse_import(stmt) {
                    None => {}
                    Some(Ok(targets)) => {
                        out.extend(targets.into_iter().map(|(module, kind, relative)| ImportRef {
                            raw_module: module,
                            kind,
                            line: logical.line,
                            relative,
                        }))
                    }
                    Some(Err(())) if strict => {
                        return Err(ImportError::Parse {
                            line: logical.line,
                            text: stmt.to_string(),
                        })
                    }
                    Some(Err(())) => {}
                }
            }
        }
        Ok(out)
    }

    fn functions(&self, source: &str) -> Vec<FunctionDef> {
        let lines = logical_lines(source);
        let mut out = Vec::new();
        for (idx, logical) in lines.iter().enumerate() {
            let Some(name) = def_name(&logical.text) else {
                continue;
            };
            let Some(inline) = header_remainder(&logical.text) else {
                continue;
            };
            let mut stmts: Vec<String> = Vec::new();
            if !inline.is_empty() {
                stmts.extend(inline.split(';').map(|s| s.trim().to_string()));
            } else {
                let mut body_indent = None;
                for next in &lines[idx + 1..] {
                    if next.indent <= logical.indent {
                        break;
                    }
                    let indent = *body_indent.get_or_insert(next.indent);
                    if next.indent < indent {
                        break;
                    }
                    if next.indent == indent {
                        stmts.extend(next.text.split(';').map(|s| s.trim().to_string()));
                    }
                }
            }
            stmts.retain(|s| !s.is_empty());
            let has_docstring = stmts.first().is_some_and(|s| is_string_literal(s));
            let rest = if has_docstring { &stmts[1..] } else { &stmts[..] };
            let placeholder_only = rest.len() <= 1 && rest.iter().all(|s| is_placeholder(s));
            out.push(FunctionDef {
                name,
                line: logical.line,
                has_docstring,
                placeholder_only,
            });
        }
        out
    }
}

#[derive(Debug)]
struct LogicalLine {
    /// 1-based line of the first physical line.
    line: usize,
    indent: usize,
    /// Sanitized text: string contents blanked, comments removed.
    text: String,
}

#[derive(Clone, Copy, PartialEq)]
enum ScanState {
    Code,
    Str { quote: char, triple: bool },
}

/// One entry per physical line: sanitized text and whether the line ends
/// inside a string literal.
fn sanitize(source: &str) -> Vec<(String, bool)> {
    let chars: Vec<char> = source.chars().collect();
    let mut lines = Vec::new();
    let mut cur = String::new();
    let mut state = ScanState::Code;
    let mut in_comment = false;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            if let ScanState::Str { triple: false, .. } = state {
                state = ScanState::Code;
            }
            lines.push((std::mem::take(&mut cur), state != ScanState::Code));
            in_comment = false;
            i += 1;
            continue;
        }
        if in_comment {
            i += 1;
            continue;
        }
        let tripled = |q: char| i + 2 < chars.len() && chars[i + 1] == q && chars[i + 2] == q;
        match state {
            ScanState::Code => {
                if c == '#' {
                    in_comment = true;
                } else if c == '"' || c == '\'' {
                    if tripled(c) {
                        cur.extend([c, c, c]);
                        state = ScanState::Str { quote: c, triple: true };
                        i += 3;
                        continue;
                    }
                    cur.push(c);
                    state = ScanState::Str { quote: c, triple: false };
                } else if c == '\r' {
                    cur.push(' ');
                } else {
                    cur.push(c);
                }
            }
            ScanState::Str { quote, triple } => {
                if c == '\\' {
                    cur.push(' ');
                    if i + 1 < chars.len() && chars[i + 1] != '\n' {
                        cur.push(' ');
                        i += 2;
                        continue;
                    }
                } else if c == quote && !triple {
                    cur.push(c);
                    state = ScanState::Code;
                } else if c == quote && tripled(c) {
                    cur.extend([c, c, c]);
                    state = ScanState::Code;
                    i += 3;
                    continue;
                } else {
                    cur.push(' ');
                }
            }
        }
        i += 1;
    }
    if !cur.is_empty() {
        lines.push((cur, state != ScanState::Code));
    }
    lines
}

fn bracket_delta(text: &str) -> i64 {
    text.chars().fold(0, |d, c| match c {
        '(' | '[' | '{' => d + 1,
        ')' | ']' | '}' => d - 1,
        _ => d,
    })
}

fn logical_lines(source: &str) -> Vec<LogicalLine> {
    let mut out = Vec::new();
    let mut pending: Option<LogicalLine> = None;
    let mut depth: i64 = 0;
    for (idx, (text, open_string)) in sanitize(source).into_iter().enumerate() {
        let trimmed_end = text.trim_end();
        let backslash = trimmed_end.ends_with('\\');
        let body = trimmed_end.strip_suffix('\\').unwrap_or(trimmed_end);
        depth = (depth + bracket_delta(body)).max(0);
        match pending.as_mut() {
            Some(p) => {
                p.text.push(' ');
                p.text.push_str(body.trim());
            }
            None => {
                if body.trim().is_empty() && !open_string && !backslash {
                    depth = 0;
                    continue;
                }
                pending = Some(LogicalLine {
                    line: idx + 1,
                    indent: body.len() - body.trim_start().len(),
                    text: body.trim().to_string(),
                });
            }
        }
        if depth == 0 && !backslash && !open_string {
            if let Some(done) = pending.take() {
                if !done.text.trim().is_empty() {
                    out.push(LogicalLine {
                        text: done.text.trim().to_string(),
                        ..done
                    });
                }
            }
        }
    }
    if let Some(done) = pending {
        if !done.text.trim().is_empty() {
            out.push(done);
        }
    }
    out
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_alphabetic() || c == '_')
        && chars.all(|c| c.is_alphanumeric() || c == '_')
}

/// Validates `a.b.c` (spaces around dots tolerated) and returns it compacted.
fn dotted_name(s: &str) -> Option<String> {
    let parts: Vec<&str> = s.split('.').map(str::trim).collect();
    parts
        .iter()
        .all(|p| is_identifier(p))
        .then(|| parts.join("."))
}

/// `name` or `name as alias`.
fn strip_alias(item: &str) -> Option<&str> {
    let item = item.trim();
    match item.split_once(" as ") {
        Some((name, alias)) => is_identifier(alias.trim()).then_some(name.trim()),
        None => Some(item),
    }
}

fn keyword_rest<'a>(stmt: &'a str, keyword: &str) -> Option<&'a str> {
    let rest = stmt.strip_prefix(keyword)?;
    match rest.chars().next() {
        None => Some(rest),
        Some(c) if c.is_whitespace() || c == '(' || c == '.' || c == '*' => Some(rest),
        Some(_) => None,
    }
}

type ParsedImport = (String, ImportKind, bool);

/// `None` when the statement is not an import at all.
fn parse_import(stmt: &str) -> Option<Result<Vec<ParsedImport>, ()>> {
    if let Some(rest) = keyword_rest(stmt, "import") {
        // `import.x` is not an import statement
        if rest.starts_with('.') {
            return None;
        }
        return Some(parse_plain_import(rest));
    }
    if let Some(rest) = keyword_rest(stmt, "from") {
        return Some(parse_from_import(rest));
    }
    None
}

fn parse_plain_import(rest: &str) -> Result<Vec<ParsedImport>, ()> {
    let rest = rest.trim();
    if rest.is_empty() {
        return Err(());
    }
    rest.split(',')
        .map(|item| {
            let name = strip_alias(item).ok_or(())?;
            let module = dotted_name(name).ok_or(())?;
            Ok((module, ImportKind::WholeModule, false))
        })
        .collect()
}

fn parse_from_import(rest: &str) -> Result<Vec<ParsedImport>, ()> {
    let rest = rest.trim_start();
    let level = rest.chars().take_while(|&c| c == '.').count();
    let rest = &rest[level..];
    let Some(import_at) = find_import_keyword(rest) else {
        return Err(());
    };
    let module = rest[..import_at].trim();
    let names = rest[import_at + "import".len()..].trim();
    let names = names
        .strip_prefix('(')
        .and_then(|n| n.strip_suffix(')'))
        .unwrap_or(names)
        .trim();
    if names.is_empty() {
        return Err(());
    }
    let name_list: Vec<&str> = names
        .split(',')
        .map(str::trim)
        .filter(|n| !n.is_empty())
        .collect();
    for n in &name_list {
        if *n != "*" && !strip_alias(n).is_some_and(is_identifier) {
            return Err(());
        }
    }
    if module.is_empty() {
        if level == 0 {
            return Err(());
        }
        // `from . import a, b` imports sibling modules
        return Ok(name_list
            .into_iter()
            .filter(|n| *n != "*")
            .filter_map(strip_alias)
            .map(|n| (n.to_string(), ImportKind::FromModule, true))
            .collect());
    }
    let module = dotted_name(module).ok_or(())?;
    Ok(vec![(module, ImportKind::FromModule, level > 0)])
}

fn find_import_keyword(s: &str) -> Option<usize> {
    let mut search = 0;
    while let Some(pos) = s[search..].find("import") {
        let at = search + pos;
        let before_ok = at == 0 || s[..at].ends_with(char::is_whitespace);
        let after = s[at + "import".len()..].chars().next();
        let after_ok = matches!(after, Some(c) if c.is_whitespace() || c == '(' || c == '*');
        if before_ok && after_ok {
            return Some(at);
        }
        search = at + 1;
    }
    None
}

fn def_name(text: &str) -> Option<String> {
    let rest = text
        .strip_prefix("async")
        .filter(|r| r.starts_with(char::is_whitespace))
        .map(str::trim_start)
        .unwrap_or(text);
    let rest = rest.strip_prefix("def")?;
    if !rest.starts_with(char::is_whitespace) {
        return None;
    }
    let rest = rest.trim_start();
    let end = rest.find(|c: char| !(c.is_alphanumeric() || c == '_'))?;
    let name = &rest[..end];
    (is_identifier(name) && rest[end..].trim_start().starts_with('(')).then(|| name.to_string())
}

/// Text after the header's closing colon, or `None` if the header is malformed.
fn header_remainder(text: &str) -> Option<&str> {
    let open = text.find('(')?;
    let mut depth = 0i64;
    let mut closed = false;
    for (i, c) in text[open..].char_indices() {
        let at = open + i;
        match c {
            '(' | '[' | '{' => depth += 1,
            ')' | ']' | '}' => {
                depth -= 1;
                if depth == 0 {
                    closed = true;
                }
            }
            ':' if depth == 0 && closed => return Some(text[at + 1..].trim()),
            _ => {}
        }
    }
    None
}

fn is_string_literal(stmt: &str) -> bool {
    let body = stmt.trim_start_matches(['r', 'R', 'u', 'U', 'b', 'B', 'f', 'F']);
    stmt.len() - body.len() <= 2 && (body.starts_with('"') || body.starts_with('\''))
}

fn is_placeholder(stmt: &str) -> bool {
    let stmt = stmt.trim();
    if stmt == "pass" || stmt == "..." {
        return true;
    }
    match stmt.strip_prefix("raise") {
        Some(rest) if rest.starts_with(char::is_whitespace) => {
            let rest = rest.trim_start();
            let after = rest
                .strip_prefix("NotImplementedError")
                .or_else(|| rest.strip_prefix("NotImplemented"));
            matches!(after.map(str::trim), Some(a) if a.is_empty() || a.starts_with('('))
        }
        _ => false,
    }
}
