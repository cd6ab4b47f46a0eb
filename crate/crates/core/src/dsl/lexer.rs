use super::{Diagnostic, Pos};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    /// Identifier, possibly dot-qualified (`api.call`, `root.0.1`) or
    /// hyphenated (`problem-owner`).
    Ident(String),
    Str(String),
    Number(u64),
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    LParen,
    RParen,
    Comma,
    Colon,
    Semi,
    /// `||`
    Parallel,
    Plus,
    Bang,
    Question,
    /// `~>`
    Refines,
    /// `(+)`
    Update,
    /// `|=`
    Meets,
    /// `->`
    Arrow,
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("'{s}'"),
            Tok::Str(_) => "string".into(),
            Tok::Number(n) => format!("'{n}'"),
            Tok::LBrace => "'{'".into(),
            Tok::RBrace => "'}'".into(),
            Tok::LBracket => "'['".into(),
            Tok::RBracket => "']'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Comma => "','".into(),
            Tok::Colon => "':'".into(),
            Tok::Semi => "';'".into(),
            Tok::Parallel => "'||'".into(),
            Tok::Plus => "'+'".into(),
            Tok::Bang => "'!'".into(),
            Tok::Question => "'?'".into(),
            Tok::Refines => "'~>'".into(),
            Tok::Update => "'(+)'".into(),
            Tok::Meets => "'|='".into(),
            Tok::Arrow => "'->'".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

fn ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '\''
}

pub fn lex(src: &str) -> Result<Vec<Token>, Diagnostic> {
    let normalized;
    let src = if src.contains('\r') {
        normalized = src.replace("\r\n", "\n");
        normalized.as_str()
    } else {
        src
    };
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);

    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }

    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, column: col };
        let peek = chars.get(i + 1).copied();
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            continue;
        }
        if ident_start(c) {
            let mut s = String::new();
            loop {
                while i < chars.len() && ident_char(chars[i]) {
                    s.push(chars[i]);
                    bump!();
                }
                let next = chars.get(i + 1).copied();
                match chars.get(i) {
                    Some('.') if next.is_some_and(|n| n.is_ascii_alphanumeric() || n == '_') => {
                        s.push('.');
                        bump!();
                    }
                    Some('-') if next.is_some_and(|n| n.is_ascii_alphabetic()) => {
                        s.push('-');
                        bump!();
                    }
                    _ => break,
                }
            }
            out.push(Token { tok: Tok::Ident(s), pos });
            continue;
        }
        if c.is_ascii_digit() {
            let mut n: u64 = 0;
            while i < chars.len() && chars[i].is_ascii_digit() {
                n = n
                    .checked_mul(10)
                    .and_then(|n| n.checked_add(chars[i].to_digit(10).unwrap() as u64))
                    .ok_or_else(|| Diagnostic::error(pos, "number too large"))?;
                bump!();
            }
            out.push(Token { tok: Tok::Number(n), pos });
            continue;
        }
        if c == '"' {
            bump!();
            let mut s = String::new();
            loop {
                match chars.get(i) {
                    None | Some('\n') => return Err(Diagnostic::error(pos, "unterminated string")),
                    Some('"') => {
                        bump!();
                        break;
                    }
                    Some('\\') => {
                        let esc = chars.get(i + 1).copied();
                        let ch = match esc {
                            Some('"') => '"',
                            Some('\\') => '\\',
                            Some('n') => '\n',
                            _ => {
                                return Err(Diagnostic::error(
                                    Pos { line, column: col },
                                    "unknown escape in string",
                                ))
                            }
                        };
                        s.push(ch);
                        bump!();
                        bump!();
                    }
                    Some(&ch) => {
                        s.push(ch);
                        bump!();
                    }
                }
            }
            out.push(Token { tok: Tok::Str(s), pos });
            continue;
        }
        let (tok, width) = match (c, peek) {
            ('(', Some('+')) if chars.get(i + 2) == Some(&')') => (Tok::Update, 3),
            ('|', Some('|')) => (Tok::Parallel, 2),
            ('|', Some('=')) => (Tok::Meets, 2),
            ('~', Some('>')) => (Tok::Refines, 2),
            ('-', Some('>')) => (Tok::Arrow, 2),
            ('{', _) => (Tok::LBrace, 1),
            ('}', _) => (Tok::RBrace, 1),
            ('[', _) => (Tok::LBracket, 1),
            (']', _) => (Tok::RBracket, 1),
            ('(', _) => (Tok::LParen, 1),
            (')', _) => (Tok::RParen, 1),
            (',', _) => (Tok::Comma, 1),
            (':', _) => (Tok::Colon, 1),
            (';', _) => (Tok::Semi, 1),
            ('+', _) => (Tok::Plus, 1),
            ('!', _) => (Tok::Bang, 1),
            ('?', _) => (Tok::Question, 1),
            _ => return Err(Diagnostic::error(pos, format!("unexpected character '{c}'"))),
        };
        for _ in 0..width {
            bump!();
        }
        out.push(Token { tok, pos });
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: Pos { line, column: col },
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(src: &str) -> Vec<Tok> {
        lex(src).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn qualified_and_primed_identifiers() {
        assert_eq!(
            toks("DevEnv.OldAPI OldAPI' api.call root.0.1"),
            vec![
                Tok::Ident("DevEnv.OldAPI".into()),
                Tok::Ident("OldAPI'".into()),
                Tok::Ident("api.call".into()),
                Tok::Ident("root.0.1".into()),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn operators() {
        assert_eq!(
            toks("(+) |= || ~> -> ( ) a->b problem-owner"),
            vec![
                Tok::Update,
                Tok::Meets,
                Tok::Parallel,
                Tok::Refines,
                Tok::Arrow,
                Tok::LParen,
                Tok::RParen,
                Tok::Ident("a".into()),
                Tok::Arrow,
                Tok::Ident("b".into()),
                Tok::Ident("problem-owner".into()),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn comments_and_positions() {
        let t = lex("# note\n  model # trailing\n{").unwrap();
        assert_eq!(t[0].tok, Tok::Ident("model".into()));
        assert_eq!((t[0].pos.line, t[0].pos.column), (2, 3));
        assert_eq!((t[1].pos.line, t[1].pos.column), (3, 1));
    }

    #[test]
    fn crlf_is_normalized() {
        let t = lex("a\r\nb").unwrap();
        assert_eq!((t[1].pos.line, t[1].pos.column), (2, 1));
    }

    #[test]
    fn bad_character_has_position() {
        let d = lex("model {\n  $").unwrap_err();
        assert_eq!((d.pos.line, d.pos.column), (2, 3));
    }

    #[test]
    fn unterminated_string() {
        assert!(lex("\"abc").is_err());
    }
}
