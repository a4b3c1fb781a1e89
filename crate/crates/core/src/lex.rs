//! Language tags and a small lexical tokenizer.
//!
//! The tokenizer covers the four target languages with one scanner plus
//! per-language comment/string rules. It is the single source of truth for
//! "token" everywhere in the pipeline: eligibility counts, Jaccard
//! similarity, shingles, BLEU, and prompt length budgeting.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Language {
    Python,
    Java,
    Cpp,
    Go,
    Other(String),
}

impl Language {
    pub fn from_path(path: &str) -> Language {
        let ext = path.rsplit('.').next().unwrap_or("");
        match ext {
            "py" | "pyi" => Language::Python,
            "java" => Language::Java,
            "cpp" | "cc" | "cxx" | "hpp" | "hh" | "hxx" | "h" | "c" => Language::Cpp,
            "go" => Language::Go,
            other => Language::Other(other.to_string()),
        }
    }

    pub fn is_supported(&self) -> bool {
        !matches!(self, Language::Other(_))
    }

    pub fn as_str(&self) -> &str {
        match self {
            Language::Python => "python",
            Language::Java => "java",
            Language::Cpp => "cpp",
            Language::Go => "go",
            Language::Other(tag) => tag,
        }
    }

    /// Line-comment prefix used when the pipeline synthesizes comment lines.
    pub fn line_comment(&self) -> &'static str {
        match self {
            Language::Python => "#",
            _ => "//",
        }
    }

    pub fn keywords(&self) -> &'static [&'static str] {
        match self {
            Language::Python => PYTHON_KEYWORDS,
            Language::Java => JAVA_KEYWORDS,
            Language::Cpp => CPP_KEYWORDS,
            Language::Go => GO_KEYWORDS,
            Language::Other(_) => &[],
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "python" => Language::Python,
            "java" => Language::Java,
            "cpp" => Language::Cpp,
            "go" => Language::Go,
            other => Language::Other(other.to_string()),
        })
    }
}

impl Serialize for Language {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Language {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(s.parse().unwrap())
    }
}

static PYTHON_KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class",
    "continue", "def", "del", "elif", "else", "except", "finally", "for", "from", "global",
    "if", "import", "in", "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return",
    "try", "while", "with", "yield",
];

static JAVA_KEYWORDS: &[&str] = &[
    "abstract", "assert", "boolean", "break", "byte", "case", "catch", "char", "class",
    "const", "continue", "default", "do", "double", "else", "enum", "extends", "final",
    "finally", "float", "for", "goto", "if", "implements", "import", "instanceof", "int",
    "interface", "long", "native", "new", "package", "private", "protected", "public",
    "return", "short", "static", "strictfp", "super", "switch", "synchronized", "this",
    "throw", "throws", "transient", "try", "void", "volatile", "while",
];

static CPP_KEYWORDS: &[&str] = &[
    "alignas", "alignof", "auto", "bool", "break", "case", "catch", "char", "class", "concept",
    "const", "constexpr", "const_cast", "continue", "decltype", "default", "delete", "do",
    "double", "dynamic_cast", "else", "enum", "explicit", "extern", "false", "float", "for",
    "friend", "goto", "if", "inline", "int", "long", "mutable", "namespace", "new", "noexcept",
    "nullptr", "operator", "private", "protected", "public", "register", "reinterpret_cast",
    "requires", "return", "short", "signed", "sizeof", "static", "static_assert",
    "static_cast", "struct", "switch", "template", "this", "throw", "true", "try", "typedef",
    "typeid", "typename", "union", "unsigned", "using", "virtual", "void", "volatile",
    "wchar_t", "while",
];

static GO_KEYWORDS: &[&str] = &[
    "break", "case", "chan", "const", "continue", "default", "defer", "else", "fallthrough",
    "for", "func", "go", "goto", "if", "import", "interface", "map", "package", "range",
    "return", "select", "struct", "switch", "type", "var",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenKind {
    Ident,
    Keyword,
    Number,
    Str,
    Comment,
    Punct,
}

/// One lexical token. Spans are byte offsets into the original text;
/// lines are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub start: usize,
    pub end: usize,
    pub line: u32,
    pub end_line: u32,
}

impl Token {
    pub fn text<'a>(&self, content: &'a str) -> &'a str {
        &content[self.start..self.end]
    }

    pub fn is_code(&self) -> bool {
        self.kind != TokenKind::Comment
    }
}

// Longest-match-first operator table shared across languages. The scanner
// resolves comments before consulting this table, so `//` only matches as
// an operator in Python.
static PUNCT3: &[&str] = &["<<=", ">>=", "**=", "//=", "...", "<=>", "->*", "&^="];
static PUNCT2: &[&str] = &[
    "==", "!=", "<=", ">=", "&&", "||", "<<", ">>", "+=", "-=", "*=", "/=", "%=", "&=", "|=",
    "^=", "->", "=>", "::", "++", "--", "**", "//", ":=", "<-", "&^",
];

/// Tokenize `content` under the comment/string rules of `lang`.
///
/// Lexing is total: malformed input degenerates into `Punct`/`Ident` tokens
/// or an unterminated string running to end of file, never an error.
pub fn lex(content: &str, lang: &Language) -> Vec<Token> {
    let bytes = content.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    let mut line: u32 = 1;
    let n = bytes.len();

    let is_python = matches!(lang, Language::Python);
    let is_go = matches!(lang, Language::Go);
    let c_style_comments = matches!(lang, Language::Java | Language::Cpp | Language::Go)
        || matches!(lang, Language::Other(_));
    let keywords = lang.keywords();

    while i < n {
        let c = bytes[i];

        // Whitespace
        if c == b'\n' {
            line += 1;
            i += 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }

        let start = i;
        let start_line = line;

        // Comments
        if is_python && c == b'#' {
            while i < n && bytes[i] != b'\n' {
                i += 1;
            }
            tokens.push(Token { kind: TokenKind::Comment, start, end: i, line: start_line, end_line: line });
            continue;
        }
        if c_style_comments && c == b'/' && i + 1 < n {
            if bytes[i + 1] == b'/' {
                while i < n && bytes[i] != b'\n' {
                    i += 1;
                }
                tokens.push(Token { kind: TokenKind::Comment, start, end: i, line: start_line, end_line: line });
                continue;
            }
            if bytes[i + 1] == b'*' {
                i += 2;
                while i < n {
                    if bytes[i] == b'\n' {
                        line += 1;
                    }
                    if bytes[i] == b'*' && i + 1 < n && bytes[i + 1] == b'/' {
                        i += 2;
                        break;
                    }
                    i += 1;
                }
                tokens.push(Token { kind: TokenKind::Comment, start, end: i, line: start_line, end_line: line });
                continue;
            }
        }

        // Strings
        if is_python && (c == b'"' || c == b'\'') {
            let quote = c;
            if i + 2 < n && bytes[i + 1] == quote && bytes[i + 2] == quote {
                // Triple-quoted
                i += 3;
                while i < n {
                    if bytes[i] == b'\n' {
                        line += 1;
                    }
                    if bytes[i] == b'\\' {
                        i += 2;
                        continue;
                    }
                    if bytes[i] == quote && i + 2 < n && bytes[i + 1] == quote && bytes[i + 2] == quote {
                        i += 3;
                        break;
                    }
                    if bytes[i] == quote && i + 2 >= n {
                        i = n;
                        break;
                    }
                    i += 1;
                }
                tokens.push(Token { kind: TokenKind::Str, start, end: i.min(n), line: start_line, end_line: line });
                continue;
            }
            i = scan_simple_string(bytes, i, quote, &mut line);
            tokens.push(Token { kind: TokenKind::Str, start, end: i, line: start_line, end_line: line });
            continue;
        }
        if !is_python && (c == b'"' || c == b'\'') {
            i = scan_simple_string(bytes, i, c, &mut line);
            tokens.push(Token { kind: TokenKind::Str, start, end: i, line: start_line, end_line: line });
            continue;
        }
        if is_go && c == b'`' {
            i += 1;
            while i < n && bytes[i] != b'`' {
                if bytes[i] == b'\n' {
                    line += 1;
                }
                i += 1;
            }
            i = (i + 1).min(n);
            tokens.push(Token { kind: TokenKind::Str, start, end: i, line: start_line, end_line: line });
            continue;
        }

        // Numbers
        if c.is_ascii_digit() {
            i += 1;
            while i < n && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'.') {
                // Stop a trailing `.` that is not followed by a digit: keeps
                // `v1.method()` chains out of number tokens.
                if bytes[i] == b'.' && !(i + 1 < n && bytes[i + 1].is_ascii_digit()) {
                    break;
                }
                i += 1;
            }
            tokens.push(Token { kind: TokenKind::Number, start, end: i, line: start_line, end_line: line });
            continue;
        }

        // Identifiers / keywords
        if c == b'_' || c.is_ascii_alphabetic() || c >= 0x80 {
            i += utf8_len(c);
            while i < n {
                let b = bytes[i];
                if b == b'_' || b.is_ascii_alphanumeric() || b >= 0x80 {
                    i += utf8_len(b);
                } else {
                    break;
                }
            }
            let text = &content[start..i];
            let kind = if keywords.contains(&text) { TokenKind::Keyword } else { TokenKind::Ident };
            tokens.push(Token { kind, start, end: i, line: start_line, end_line: line });
            continue;
        }

        // Operators and punctuation, longest match first.
        let rest = &content[i..];
        let mut matched = 1;
        for op in PUNCT3 {
            if rest.starts_with(op) {
                matched = 3;
                break;
            }
        }
        if matched == 1 {
            for op in PUNCT2 {
                if rest.starts_with(op) {
                    matched = 2;
                    break;
                }
            }
        }
        i += matched;
        tokens.push(Token { kind: TokenKind::Punct, start, end: i, line: start_line, end_line: line });
    }

    tokens
}

fn scan_simple_string(bytes: &[u8], mut i: usize, quote: u8, line: &mut u32) -> usize {
    let n = bytes.len();
    i += 1;
    while i < n {
        match bytes[i] {
            b'\\' => i += 2,
            b'\n' => {
                // Unterminated single-line string: stop at the newline so
                // the rest of the file still lexes sanely.
                return i;
            }
            b if b == quote => return i + 1,
            _ => i += 1,
        }
        if i > n {
            *line += 0;
            return n;
        }
    }
    n
}

#[inline]
fn utf8_len(first: u8) -> usize {
    if first < 0x80 {
        1
    } else if first >= 0xF0 {
        4
    } else if first >= 0xE0 {
        3
    } else {
        2
    }
}

/// Code (non-comment) tokens whose span lies fully inside `[start, end)`.
pub fn code_tokens_in_span(tokens: &[Token], start: usize, end: usize) -> impl Iterator<Item = &Token> {
    tokens.iter().filter(move |t| t.is_code() && t.start >= start && t.end <= end)
}

/// Count of code tokens in the whole token list.
pub fn code_token_count(tokens: &[Token]) -> usize {
    tokens.iter().filter(|t| t.is_code()).count()
}

/// The token texts (code tokens only) of `content`, in order.
pub fn code_token_texts<'a>(content: &'a str, tokens: &[Token]) -> Vec<&'a str> {
    tokens.iter().filter(|t| t.is_code()).map(|t| t.text(content)).collect()
}
