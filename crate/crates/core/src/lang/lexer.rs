use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    Str(String),
    Int(i64),
    DotDot,
    LBrace,
    RBrace,
    LParen,
    RParen,
    Comma,
    Colon,
    Arrow,
    EqEq,
    Le,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Str(s) => write!(f, "string {s:?}"),
            Tok::Int(n) => write!(f, "integer {n}"),
            Tok::DotDot => f.write_str("`..`"),
            Tok::LBrace => f.write_str("`{`"),
            Tok::RBrace => f.write_str("`}`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::Arrow => f.write_str("`=>`"),
            Tok::EqEq => f.write_str("`==`"),
            Tok::Le => f.write_str("`<=`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Pos {
    pub line: usize,
    pub column: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

#[derive(Debug, Clone)]
pub(crate) struct LexError {
    pub pos: Pos,
    pub message: String,
}

/// Tokenizes the whole input. Bad characters are reported and skipped so the
/// parser still sees the rest of the file.
pub(crate) fn tokenize(text: &str) -> (Vec<Token>, Vec<LexError>) {
    let mut lx = Lexer {
        chars: text.chars().collect(),
        i: 0,
        line: 1,
        column: 1,
    };
    let mut tokens = Vec::new();
    let mut errors = Vec::new();
    loop {
        lx.skip_trivia();
        let pos = lx.pos();
        let Some(c) = lx.peek() else {
            tokens.push(Token { tok: Tok::Eof, pos });
            break;
        };
        let tok = match c {
            '{' => lx.single(Tok::LBrace),
            '}' => lx.single(Tok::RBrace),
            '(' => lx.single(Tok::LParen),
            ')' => lx.single(Tok::RParen),
            ',' => lx.single(Tok::Comma),
            ':' => lx.single(Tok::Colon),
            '.' if lx.peek_at(1) == Some('.') => {
                lx.bump();
                lx.bump();
                Ok(Tok::DotDot)
            }
            '=' if lx.peek_at(1) == Some('>') => {
                lx.bump();
                lx.bump();
                Ok(Tok::Arrow)
            }
            '=' if lx.peek_at(1) == Some('=') => {
                lx.bump();
                lx.bump();
                Ok(Tok::EqEq)
            }
            '<' if lx.peek_at(1) == Some('=') => {
                lx.bump();
                lx.bump();
                Ok(Tok::Le)
            }
            '"' => lx.string(),
            c if c.is_ascii_digit() || (c == '-' && lx.peek_at(1).is_some_and(|d| d.is_ascii_digit())) => {
                lx.number()
            }
            c if c.is_ascii_alphabetic() || c == '_' => Ok(lx.ident()),
            other => {
                lx.bump();
                Err(format!("unexpected character {other:?}"))
            }
        };
        match tok {
            Ok(tok) => tokens.push(Token { tok, pos }),
            Err(message) => errors.push(LexError { pos, message }),
        }
    }
    (tokens, errors)
}

struct Lexer {
    chars: Vec<char>,
    i: usize,
    line: usize,
    column: usize,
}

impl Lexer {
    fn pos(&self) -> Pos {
        Pos {
            line: self.line,
            column: self.column,
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.i).copied()
    }

    fn peek_at(&self, n: usize) -> Option<char> {
        self.chars.get(self.i + n).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.i += 1;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn single(&mut self, tok: Tok) -> Result<Tok, String> {
        self.bump();
        Ok(tok)
    }

    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek() {
            if c == '#' {
                while self.peek().is_some_and(|c| c != '\n') {
                    self.bump();
                }
            } else if c.is_whitespace() {
                self.bump();
            } else {
                break;
            }
        }
    }

    fn ident(&mut self) -> Tok {
        let mut s = String::new();
        while let Some(c) = self.peek().filter(|c| c.is_ascii_alphanumeric() || *c == '_') {
            s.push(c);
            self.bump();
        }
        Tok::Ident(s)
    }

    fn number(&mut self) -> Result<Tok, String> {
        let mut s = String::new();
        if self.peek() == Some('-') {
            s.push('-');
            self.bump();
        }
        while let Some(c) = self.peek().filter(|c| c.is_ascii_digit()) {
            s.push(c);
            self.bump();
        }
        s.parse::<i64>()
            .map(Tok::Int)
            .map_err(|_| format!("integer out of range: {s}"))
    }

    fn string(&mut self) -> Result<Tok, String> {
        self.bump();
        let mut s = String::new();
        loop {
            match self.bump() {
                None | Some('\n') => return Err("unterminated string".into()),
                Some('"') => return Ok(Tok::Str(s)),
                Some('\\') => match self.bump() {
                    Some('"') => s.push('"'),
                    Some('\\') => s.push('\\'),
                    Some('n') => s.push('\n'),
                    Some('t') => s.push('\t'),
                    Some(other) => return Err(format!("unknown escape \\{other}")),
                    None => return Err("unterminated string".into()),
                },
                Some(c) => s.push(c),
            }
        }
    }
}

/// Quotes `s` so that [`tokenize`] reads it back as the same string.
pub(crate) fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}
