//! Token-stream parser for the brace-delimited languages (Java, C++, Go).
//!
//! Statements are scanned to `;`, `{`, or (for Go) a statement-terminating
//! newline. A `{` opens a Block node; the statement head decides whether the
//! construct is a Function, Class, IfStatement, Loop, or Other. Function
//! heads are recognized by the `name(...)` pattern followed by the body
//! brace, with tolerances for constructor initializer lists, trailing
//! return types, and `throws` clauses.

use std::time::{Duration, Instant};

use super::{Node, NodeKind, ParseError, TreeBuilder};
use crate::lex::{Language, Token, TokenKind};

pub(super) fn parse(
    content: &str,
    tokens: &[Token],
    lang: &Language,
    deadline: Instant,
    timeout: Duration,
) -> Result<Vec<Node>, ParseError> {
    let last_line = content.lines().count().max(1) as u32;
    let mut builder = TreeBuilder::new(content.len(), last_line);
    let mut parser = Parser { content, tokens, lang, pos: 0, deadline, timeout };
    let children = parser.parse_stmts(&mut builder, false)?;
    builder.nodes[0].children = children;
    Ok(builder.nodes)
}

struct Parser<'a> {
    content: &'a str,
    tokens: &'a [Token],
    lang: &'a Language,
    pos: usize,
    deadline: Instant,
    timeout: Duration,
}

impl<'a> Parser<'a> {
    fn check_time(&self) -> Result<(), ParseError> {
        if Instant::now() > self.deadline {
            return Err(ParseError::Timeout(self.timeout));
        }
        Ok(())
    }

    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_code(&self) -> Option<&Token> {
        self.tokens[self.pos..].iter().find(|t| t.is_code())
    }

    fn text(&self, t: &Token) -> &'a str {
        t.text(self.content)
    }

    fn bump(&mut self) -> &Token {
        let t = &self.tokens[self.pos];
        self.pos += 1;
        t
    }

    /// Skip comment tokens in place.
    fn skip_comments(&mut self) {
        while let Some(t) = self.peek() {
            if t.kind == TokenKind::Comment {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn parse_stmts(&mut self, builder: &mut TreeBuilder, stop_at_rbrace: bool) -> Result<Vec<usize>, ParseError> {
        let mut children = Vec::new();
        loop {
            self.check_time()?;
            let Some(t) = self.peek() else { break };
            let t = *t;
            if t.kind == TokenKind::Comment {
                self.pos += 1;
                children.push(builder.add(Node {
                    kind: NodeKind::Comment,
                    byte_span: (t.start, t.end),
                    line_span: (t.line, t.end_line),
                    children: Vec::new(),
                    name: None,
                    signature_end: None,
                    doc_span: None,
                }));
                continue;
            }
            let text = self.text(&t);
            if text == "}" {
                if stop_at_rbrace {
                    break;
                }
                self.pos += 1; // stray closing brace; keep going
                continue;
            }
            if text == ";" {
                self.pos += 1;
                continue;
            }
            if let Some(idx) = self.parse_statement(builder)? {
                children.push(idx);
            }
        }
        Ok(children)
    }

    fn parse_statement(&mut self, builder: &mut TreeBuilder) -> Result<Option<usize>, ParseError> {
        let t = *self.peek().expect("caller checked");
        let text = self.text(&t);
        let is_go = matches!(self.lang, Language::Go);
        let is_java = matches!(self.lang, Language::Java);
        let is_cpp = matches!(self.lang, Language::Cpp);

        // C/C++ preprocessor line.
        if is_cpp && text == "#" {
            return Ok(Some(self.parse_preprocessor(builder)));
        }

        if t.kind == TokenKind::Keyword {
            match text {
                "import" if is_go => return Ok(Some(self.parse_go_import(builder))),
                "import" if is_java => return Ok(Some(self.parse_to_semicolon(builder, NodeKind::ImportStatement))),
                "package" if is_go => return Ok(Some(self.parse_to_line_end(builder, NodeKind::Other))),
                "package" if is_java => return Ok(Some(self.parse_to_semicolon(builder, NodeKind::Other))),
                "if" => return self.parse_if(builder).map(Some),
                "for" | "while" | "do" => return self.parse_loop(builder).map(Some),
                "func" if is_go => return self.parse_go_func(builder).map(Some),
                "type" if is_go => return self.parse_go_type(builder).map(Some),
                "const" | "var" if is_go => return Ok(Some(self.parse_go_decl_group(builder))),
                "go" | "defer" | "return" if is_go => {
                    return Ok(Some(self.scan_plain_statement(builder)));
                }
                "public" | "private" | "protected"
                    if is_cpp && self.nth_code_text(1) == Some(":") =>
                {
                    // Access specifier label `public:`.
                    let start = t;
                    self.pos += 1;
                    let colon = *self.bump();
                    return Ok(Some(builder.add(leaf(NodeKind::Other, &start, &colon))));
                }
                _ => {}
            }
        }

        self.scan_statement(builder).map(Some)
    }

    fn nth_code_text(&self, n: usize) -> Option<&'a str> {
        self.tokens[self.pos..]
            .iter()
            .filter(|t| t.is_code())
            .nth(n)
            .map(|t| self.text(t))
    }

    fn parse_preprocessor(&mut self, builder: &mut TreeBuilder) -> usize {
        let start = *self.bump(); // '#'
        let mut last = start;
        let mut is_include = false;
        let mut first = true;
        while let Some(t) = self.peek() {
            if t.line > last.end_line {
                break;
            }
            if first && t.is_code() {
                is_include = self.text(t) == "include";
                first = false;
            }
            last = *self.bump();
        }
        let kind = if is_include { NodeKind::ImportStatement } else { NodeKind::Other };
        builder.add(leaf(kind, &start, &last))
    }

    fn parse_go_import(&mut self, builder: &mut TreeBuilder) -> usize {
        let start = *self.bump(); // 'import'
        let mut last = start;
        if let Some(t) = self.peek_code() {
            if self.text(t) == "(" {
                let mut depth = 0i64;
                while let Some(t) = self.peek() {
                    let t = *t;
                    if t.is_code() {
                        match self.text(&t) {
                            "(" => depth += 1,
                            ")" => {
                                last = *self.bump();
                                depth -= 1;
                                if depth == 0 {
                                    break;
                                }
                                continue;
                            }
                            _ => {}
                        }
                    }
                    last = *self.bump();
                }
                return builder.add(leaf(NodeKind::ImportStatement, &start, &last));
            }
        }
        // Single-line form.
        while let Some(t) = self.peek() {
            if t.line > last.end_line {
                break;
            }
            last = *self.bump();
        }
        builder.add(leaf(NodeKind::ImportStatement, &start, &last))
    }

    fn parse_to_semicolon(&mut self, builder: &mut TreeBuilder, kind: NodeKind) -> usize {
        let start = *self.bump();
        let mut last = start;
        while let Some(t) = self.peek() {
            let t = *t;
            last = *self.bump();
            if t.is_code() && self.text(&t) == ";" {
                break;
            }
        }
        builder.add(leaf(kind, &start, &last))
    }

    fn parse_to_line_end(&mut self, builder: &mut TreeBuilder, kind: NodeKind) -> usize {
        let start = *self.bump();
        let mut last = start;
        while let Some(t) = self.peek() {
            if t.line > last.end_line {
                break;
            }
            last = *self.bump();
        }
        builder.add(leaf(kind, &start, &last))
    }

    /// Go statement terminated by newline at bracket depth zero,
    /// following Go's semicolon-insertion shape: a newline ends the
    /// statement unless the previous token cannot end one.
    fn scan_plain_statement(&mut self, builder: &mut TreeBuilder) -> usize {
        let start = *self.bump();
        let mut last = start;
        let mut depth = 0i64;
        while let Some(t) = self.peek() {
            let t = *t;
            if t.is_code() {
                let text = self.text(&t);
                if depth == 0 && t.line > last.end_line && !continues_go_statement(self.content, &last) {
                    break;
                }
                match text {
                    "(" | "[" | "{" => depth += 1,
                    ")" | "]" | "}" => {
                        if depth == 0 {
                            break;
                        }
                        depth -= 1;
                    }
                    ";" if depth == 0 => {
                        last = *self.bump();
                        break;
                    }
                    _ => {}
                }
                last = *self.bump();
            } else {
                if depth == 0 && t.line > last.end_line {
                    break;
                }
                self.pos += 1;
            }
        }
        builder.add(leaf(NodeKind::Other, &start, &last))
    }

    fn parse_go_decl_group(&mut self, builder: &mut TreeBuilder) -> usize {
        if self.nth_code_text(1) == Some("(") {
            let start = *self.bump(); // const/var
            let mut last = start;
            let mut depth = 0i64;
            while let Some(t) = self.peek() {
                let t = *t;
                if t.is_code() {
                    match self.text(&t) {
                        "(" => depth += 1,
                        ")" => {
                            last = *self.bump();
                            depth -= 1;
                            if depth == 0 {
                                break;
                            }
                            continue;
                        }
                        _ => {}
                    }
                }
                last = *self.bump();
            }
            return builder.add(leaf(NodeKind::Other, &start, &last));
        }
        self.scan_plain_statement(builder)
    }

    fn parse_go_type(&mut self, builder: &mut TreeBuilder) -> Result<usize, ParseError> {
        let start = *self.bump(); // 'type'
        self.skip_comments();
        // Grouped form `type ( ... )`.
        if self.peek().map(|t| self.text(t)) == Some("(") {
            let mut last = start;
            let mut depth = 0i64;
            while let Some(t) = self.peek() {
                let t = *t;
                if t.is_code() {
                    match self.text(&t) {
                        "(" => depth += 1,
                        ")" => {
                            last = *self.bump();
                            depth -= 1;
                            if depth == 0 {
                                break;
                            }
                            continue;
                        }
                        _ => {}
                    }
                }
                last = *self.bump();
            }
            return Ok(builder.add(leaf(NodeKind::Other, &start, &last)));
        }

        let name = self.peek_code().filter(|t| t.kind == TokenKind::Ident).map(|t| self.text(t).to_string());
        if name.is_some() {
            self.skip_comments();
            self.pos += 1;
        }
        self.skip_comments();
        let shape = self.peek_code().map(|t| self.text(t));
        if matches!(shape, Some("struct") | Some("interface")) {
            self.pos += 1; // struct/interface keyword
            self.skip_comments();
            if self.peek().map(|t| self.text(t)) == Some("{") {
                let sig_end = self.peek().map(|t| t.start).unwrap_or(start.end);
                let block_idx = self.parse_block(builder)?;
                let block = builder.nodes[block_idx].clone();
                return Ok(builder.add(Node {
                    kind: NodeKind::Class,
                    byte_span: (start.start, block.byte_span.1),
                    line_span: (start.line, block.line_span.1),
                    children: vec![block_idx],
                    name,
                    signature_end: Some(sig_end),
                    doc_span: None,
                }));
            }
        }
        // Alias or simple definition: rest of the line.
        let mut last = start;
        while let Some(t) = self.peek() {
            if t.line > last.end_line {
                break;
            }
            last = *self.bump();
        }
        let mut node = leaf(NodeKind::Class, &start, &last);
        node.name = name;
        node.signature_end = Some(last.end);
        Ok(builder.add(node))
    }

    fn parse_go_func(&mut self, builder: &mut TreeBuilder) -> Result<usize, ParseError> {
        let start = *self.bump(); // 'func'
        self.skip_comments();
        // Optional method receiver.
        if self.peek().map(|t| self.text(t)) == Some("(") {
            self.consume_balanced_parens();
        }
        self.skip_comments();
        let name = self
            .peek()
            .filter(|t| t.kind == TokenKind::Ident)
            .map(|t| self.text(t).to_string());
        if name.is_some() {
            self.pos += 1;
        }
        // Params and results, up to the body brace at depth zero.
        let mut depth = 0i64;
        let mut prev_text: Option<&str> = None;
        let mut last = start;
        while let Some(t) = self.peek() {
            let t = *t;
            if !t.is_code() {
                self.pos += 1;
                continue;
            }
            let text = self.text(&t);
            match text {
                "(" | "[" => depth += 1,
                ")" | "]" => depth -= 1,
                "{" if depth == 0 => {
                    // `struct{...}` / `interface{...}` in a result type is
                    // part of the signature, not the body.
                    if matches!(prev_text, Some("struct") | Some("interface") | Some("map") | Some("chan")) {
                        depth += 1;
                    } else {
                        break;
                    }
                }
                "}" if depth > 0 => depth -= 1,
                _ => {}
            }
            prev_text = Some(text);
            last = *self.bump();
        }
        let sig_end = self.peek().map(|t| t.start).unwrap_or(last.end);
        if self.peek().map(|t| self.text(t)) == Some("{") {
            let block_idx = self.parse_block(builder)?;
            let block = builder.nodes[block_idx].clone();
            return Ok(builder.add(Node {
                kind: NodeKind::Function,
                byte_span: (start.start, block.byte_span.1),
                line_span: (start.line, block.line_span.1),
                children: vec![block_idx],
                name,
                signature_end: Some(sig_end),
                doc_span: None,
            }));
        }
        Ok(builder.add(leaf(NodeKind::Other, &start, &last)))
    }

    fn consume_balanced_parens(&mut self) {
        let mut depth = 0i64;
        while let Some(t) = self.peek() {
            let t = *t;
            if t.is_code() {
                match self.text(&t) {
                    "(" => depth += 1,
                    ")" => {
                        self.pos += 1;
                        depth -= 1;
                        if depth == 0 {
                            return;
                        }
                        continue;
                    }
                    _ => {}
                }
            }
            self.pos += 1;
        }
    }

    /// Parse `{ ... }` into a Block node. Assumes the cursor is at `{`.
    fn parse_block(&mut self, builder: &mut TreeBuilder) -> Result<usize, ParseError> {
        let open = *self.bump();
        let children = self.parse_stmts(builder, true)?;
        let close = if self.peek().map(|t| self.text(t)) == Some("}") {
            *self.bump()
        } else {
            *self.tokens.get(self.pos.saturating_sub(1)).unwrap_or(&open)
        };
        Ok(builder.add(Node {
            kind: NodeKind::Block,
            byte_span: (open.start, close.end),
            line_span: (open.line, close.end_line),
            children,
            name: None,
            signature_end: None,
            doc_span: None,
        }))
    }

    fn parse_if(&mut self, builder: &mut TreeBuilder) -> Result<usize, ParseError> {
        let start = *self.bump(); // 'if'
        self.consume_condition();
        let mut children = Vec::new();
        let mut end = (start.end, start.end_line);

        if self.peek().map(|t| self.text(t)) == Some("{") {
            let block = self.parse_block(builder)?;
            end = (builder.nodes[block].byte_span.1, builder.nodes[block].line_span.1);
            children.push(block);
        } else if !matches!(self.lang, Language::Go) {
            if let Some(stmt) = self.parse_single_substatement(builder)? {
                end = (builder.nodes[stmt].byte_span.1, builder.nodes[stmt].line_span.1);
                children.push(stmt);
            }
        }

        self.skip_comments();
        if self.peek().map(|t| self.text(t)) == Some("else") {
            self.pos += 1;
            self.skip_comments();
            match self.peek().map(|t| self.text(t)) {
                Some("if") => {
                    let nested = self.parse_if(builder)?;
                    end = (builder.nodes[nested].byte_span.1, builder.nodes[nested].line_span.1);
                    children.push(nested);
                }
                Some("{") => {
                    let block = self.parse_block(builder)?;
                    end = (builder.nodes[block].byte_span.1, builder.nodes[block].line_span.1);
                    children.push(block);
                }
                _ => {
                    if let Some(stmt) = self.parse_single_substatement(builder)? {
                        end = (builder.nodes[stmt].byte_span.1, builder.nodes[stmt].line_span.1);
                        children.push(stmt);
                    }
                }
            }
        }

        Ok(builder.add(Node {
            kind: NodeKind::IfStatement,
            byte_span: (start.start, end.0),
            line_span: (start.line, end.1),
            children,
            name: None,
            signature_end: None,
            doc_span: None,
        }))
    }

    fn parse_loop(&mut self, builder: &mut TreeBuilder) -> Result<usize, ParseError> {
        let start = *self.bump(); // for / while / do
        let is_do = self.text(&start) == "do";
        let mut children = Vec::new();
        let mut end = (start.end, start.end_line);

        if !is_do {
            self.consume_condition();
        } else {
            self.skip_comments();
        }

        if self.peek().map(|t| self.text(t)) == Some("{") {
            let block = self.parse_block(builder)?;
            end = (builder.nodes[block].byte_span.1, builder.nodes[block].line_span.1);
            children.push(block);
        } else if self.peek().map(|t| self.text(t)) == Some(";") {
            let semi = *self.bump(); // empty body, e.g. `while (spin());`
            end = (semi.end, semi.end_line);
        } else if !matches!(self.lang, Language::Go) {
            if let Some(stmt) = self.parse_single_substatement(builder)? {
                end = (builder.nodes[stmt].byte_span.1, builder.nodes[stmt].line_span.1);
                children.push(stmt);
            }
        }

        if is_do {
            // Trailing `while (...);`
            self.skip_comments();
            if self.peek().map(|t| self.text(t)) == Some("while") {
                self.pos += 1;
                self.consume_condition();
                if self.peek().map(|t| self.text(t)) == Some(";") {
                    let semi = *self.bump();
                    end = (semi.end, semi.end_line);
                }
            }
        }

        Ok(builder.add(Node {
            kind: NodeKind::Loop,
            byte_span: (start.start, end.0),
            line_span: (start.line, end.1),
            children,
            name: None,
            signature_end: None,
            doc_span: None,
        }))
    }

    /// Consume a control-flow head up to the opening `{` (Go) or across the
    /// parenthesized condition (Java/C++).
    fn consume_condition(&mut self) {
        let mut depth = 0i64;
        let mut prev_text: Option<&str> = None;
        while let Some(t) = self.peek() {
            let t = *t;
            if !t.is_code() {
                self.pos += 1;
                continue;
            }
            let text = self.text(&t);
            match text {
                "(" | "[" => depth += 1,
                ")" | "]" => {
                    depth -= 1;
                    if depth == 0 && !matches!(self.lang, Language::Go) {
                        self.pos += 1;
                        return;
                    }
                }
                "{" if depth == 0 => {
                    if matches!(prev_text, Some("struct") | Some("interface") | Some("map") | Some("chan")) {
                        depth += 1;
                    } else {
                        return;
                    }
                }
                "}" if depth > 0 => depth -= 1,
                ";" if depth == 0 && !matches!(self.lang, Language::Go) => return,
                _ => {}
            }
            prev_text = Some(text);
            self.pos += 1;
        }
    }

    fn parse_single_substatement(&mut self, builder: &mut TreeBuilder) -> Result<Option<usize>, ParseError> {
        self.skip_comments();
        if self.peek().is_none() || self.peek().map(|t| self.text(t)) == Some("}") {
            return Ok(None);
        }
        self.parse_statement(builder)
    }

    /// Generic statement scan for Java/C++ (and the Go fallback).
    fn scan_statement(&mut self, builder: &mut TreeBuilder) -> Result<usize, ParseError> {
        let is_go = matches!(self.lang, Language::Go);
        if is_go {
            return Ok(self.scan_plain_statement(builder));
        }

        let start = *self.peek().expect("caller checked");
        let head_start = self.pos;
        let mut depth = 0i64;
        let mut seen_assign = false;
        let mut last = start;

        loop {
            self.check_time()?;
            let Some(t) = self.peek() else {
                // EOF: whatever we consumed is an Other statement.
                return Ok(builder.add(leaf(NodeKind::Other, &start, &last)));
            };
            let t = *t;
            if !t.is_code() {
                self.pos += 1;
                continue;
            }
            let text = self.text(&t);
            match text {
                "(" | "[" => depth += 1,
                ")" | "]" => depth -= 1,
                ";" if depth <= 0 => {
                    last = *self.bump();
                    return Ok(builder.add(leaf(NodeKind::Other, &start, &last)));
                }
                "}" if depth <= 0 => {
                    // Statement ends at the enclosing block's close.
                    return Ok(builder.add(leaf(NodeKind::Other, &start, &last)));
                }
                "{" if depth == 0 => {
                    if seen_assign {
                        // Initializer braces: consume balanced, keep scanning.
                        let mut bdepth = 0i64;
                        while let Some(b) = self.peek() {
                            let b = *b;
                            if b.is_code() {
                                match self.text(&b) {
                                    "{" => bdepth += 1,
                                    "}" => {
                                        last = *self.bump();
                                        bdepth -= 1;
                                        if bdepth == 0 {
                                            break;
                                        }
                                        continue;
                                    }
                                    _ => {}
                                }
                            }
                            last = *self.bump();
                        }
                        continue;
                    }
                    return self.finish_braced_construct(builder, head_start, &start);
                }
                _ => {
                    if depth == 0 && is_assignment_op(text) {
                        seen_assign = true;
                    }
                }
            }
            last = *self.bump();
        }
    }

    /// The cursor sits at a block-opening `{`; classify the statement head
    /// as Class, Function, or Other-with-block and build the node.
    fn finish_braced_construct(
        &mut self,
        builder: &mut TreeBuilder,
        head_start: usize,
        start: &Token,
    ) -> Result<usize, ParseError> {
        let head: Vec<&Token> =
            self.tokens[head_start..self.pos].iter().filter(|t| t.is_code()).collect();
        let sig_end = self.peek().map(|t| t.start).unwrap_or(start.end);

        let classification = classify_head(self.content, &head, self.lang);
        let block_idx = self.parse_block(builder)?;
        let block = builder.nodes[block_idx].clone();
        let mut byte_end = block.byte_span.1;
        let mut line_end = block.line_span.1;

        let kind = match classification {
            HeadKind::Class(_) | HeadKind::Function(_) => {
                // C++ allows `struct X {} x;`; fold the trailing declarator.
                if matches!(self.lang, Language::Cpp) {
                    if let HeadKind::Class(_) = classification {
                        while let Some(t) = self.peek() {
                            let t = *t;
                            if !t.is_code() {
                                self.pos += 1;
                                continue;
                            }
                            let text = self.text(&t);
                            byte_end = t.end;
                            line_end = t.end_line;
                            self.pos += 1;
                            if text == ";" {
                                break;
                            }
                        }
                    }
                }
                match classification {
                    HeadKind::Class(_) => NodeKind::Class,
                    _ => NodeKind::Function,
                }
            }
            HeadKind::Other => NodeKind::Other,
        };
        let name = match classification {
            HeadKind::Class(ref n) | HeadKind::Function(ref n) => n.clone(),
            HeadKind::Other => None,
        };

        Ok(builder.add(Node {
            kind,
            byte_span: (start.start, byte_end),
            line_span: (start.line, line_end),
            children: vec![block_idx],
            name,
            signature_end: Some(sig_end),
            doc_span: None,
        }))
    }
}

enum HeadKind {
    Class(Option<String>),
    Function(Option<String>),
    Other,
}

fn is_assignment_op(text: &str) -> bool {
    text.ends_with('=')
        && !matches!(text, "==" | "!=" | "<=" | ">=" | "<=>")
}

fn continues_go_statement(content: &str, last: &Token) -> bool {
    if last.kind != TokenKind::Punct {
        return false;
    }
    !matches!(last.text(content), ")" | "]" | "}" | "++" | "--")
}

/// Decide what a brace-opening statement head is.
fn classify_head(content: &str, head: &[&Token], lang: &Language) -> HeadKind {
    let class_keywords: &[&str] = match lang {
        Language::Java => &["class", "interface", "enum"],
        Language::Cpp => &["class", "struct", "union", "enum"],
        _ => &[],
    };

    // Class-like keyword at the head level (not inside template angle
    // brackets, where `class T` is a parameter).
    for (i, t) in head.iter().enumerate() {
        if t.kind != TokenKind::Keyword {
            continue;
        }
        let text = t.text(content);
        if class_keywords.contains(&text) {
            let prev = i.checked_sub(1).map(|p| head[p].text(content));
            if matches!(prev, Some("<") | Some(",")) {
                continue;
            }
            // `enum class X`: the name is after both keywords.
            let name = head[i + 1..]
                .iter()
                .find(|t| t.kind == TokenKind::Ident)
                .map(|t| t.text(content).to_string());
            return HeadKind::Class(name);
        }
    }

    // Function pattern: some identifier directly followed by `(`, whose
    // matching `)` is followed only by trailer tokens before the `{`.
    let mut i = 0;
    while i < head.len() {
        let t = head[i];
        if t.kind == TokenKind::Ident
            && i + 1 < head.len()
            && head[i + 1].text(content) == "("
            && i.checked_sub(1).map(|p| head[p].text(content)) != Some("new")
        {
            // Find the matching close paren.
            let mut depth = 0i64;
            let mut j = i + 1;
            let mut close = None;
            while j < head.len() {
                match head[j].text(content) {
                    "(" => depth += 1,
                    ")" => {
                        depth -= 1;
                        if depth == 0 {
                            close = Some(j);
                            break;
                        }
                    }
                    _ => {}
                }
                j += 1;
            }
            if let Some(close) = close {
                if trailer_is_function_like(content, &head[close + 1..], lang) {
                    return HeadKind::Function(Some(t.text(content).to_string()));
                }
            }
        }
        i += 1;
    }

    HeadKind::Other
}

fn trailer_is_function_like(content: &str, trailer: &[&Token], lang: &Language) -> bool {
    if trailer.is_empty() {
        return true;
    }
    let first = trailer[0].text(content);
    // C++ constructor initializer list or trailing return type.
    if matches!(lang, Language::Cpp) && (first == ":" || first == "->") {
        return true;
    }
    let mut idx = 0;
    while idx < trailer.len() {
        let text = trailer[idx].text(content);
        let ok = matches!(
            text,
            "const" | "noexcept" | "override" | "final" | "mutable" | "throws" | "throw" | ","
        ) || trailer[idx].kind == TokenKind::Ident
            || (text == "(" || text == ")") && matches!(lang, Language::Cpp); // noexcept(...)
        if !ok {
            return false;
        }
        idx += 1;
    }
    true
}

fn leaf(kind: NodeKind, start: &Token, last: &Token) -> Node {
    Node {
        kind,
        byte_span: (start.start, last.end.max(start.end)),
        line_span: (start.line, last.end_line.max(start.end_line)),
        children: Vec::new(),
        name: None,
        signature_end: None,
        doc_span: None,
    }
}
