use super::ParseError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    /// `<1>` / `⟨1⟩` side tag after a term.
    SideTag(u8),
    Assign,  // :=
    Sample,  // :~  :≈
    Colon,
    Semi,
    Comma,
    LParen,
    RParen,
    LBrack,
    RBrack,
    LAngle, // ⟨  <|
    RAngle, // ⟩  |>
    Bar,
    Plus,
    Minus,
    Star,
    Slash,
    Dot,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Arrow, // =>
    Eof,
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

pub fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    macro_rules! bump {
        ($n:expr) => {{
            for _ in 0..$n {
                if chars[i] == '\n' {
                    line += 1;
                    col = 1;
                } else {
                    col += 1;
                }
                i += 1;
            }
        }};
    }
    while i < chars.len() {
        let c = chars[i];
        let next = chars.get(i + 1).copied();
        let (l0, c0) = (line, col);
        let push = |out: &mut Vec<Token>, tok| out.push(Token { tok, line: l0, col: c0 });
        if c.is_whitespace() {
            bump!(1);
            continue;
        }
        if c == '/' && next == Some('/') {
            while i < chars.len() && chars[i] != '\n' {
                bump!(1);
            }
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                bump!(1);
            }
            let text: String = chars[start..i].iter().collect();
            let n = text.parse::<i64>().map_err(|_| ParseError::at(l0, c0, format!("integer literal out of range: {text}")))?;
            push(&mut out, Tok::Int(n));
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                bump!(1);
            }
            push(&mut out, Tok::Ident(chars[start..i].iter().collect()));
            continue;
        }
        // `<1>` and `⟨1⟩` directly after a term are side tags.
        let tag_close = |open: char, close: char| {
            c == open
                && matches!(next, Some('1') | Some('2'))
                && chars.get(i + 2) == Some(&close)
        };
        if tag_close('<', '>') || tag_close('⟨', '⟩') {
            let side = if next == Some('1') { 1 } else { 2 };
            push(&mut out, Tok::SideTag(side));
            bump!(3);
            continue;
        }
        let (tok, width) = match (c, next) {
            (':', Some('=')) => (Tok::Assign, 2),
            (':', Some('~')) => (Tok::Sample, 2),
            (':', Some('≈')) => (Tok::Sample, 2),
            (':', _) => (Tok::Colon, 1),
            ('<', Some('|')) => (Tok::LAngle, 2),
            ('|', Some('>')) => (Tok::RAngle, 2),
            ('<', Some('=')) => (Tok::Le, 2),
            ('>', Some('=')) => (Tok::Ge, 2),
            ('!', Some('=')) => (Tok::Ne, 2),
            ('=', Some('>')) => (Tok::Arrow, 2),
            ('<', _) => (Tok::Lt, 1),
            ('>', _) => (Tok::Gt, 1),
            ('=', _) => (Tok::Eq, 1),
            ('≠', _) => (Tok::Ne, 1),
            ('≤', _) => (Tok::Le, 1),
            ('≥', _) => (Tok::Ge, 1),
            ('⟹', _) => (Tok::Arrow, 1),
            ('⟨', _) => (Tok::LAngle, 1),
            ('⟩', _) => (Tok::RAngle, 1),
            (';', _) => (Tok::Semi, 1),
            (',', _) => (Tok::Comma, 1),
            ('(', _) => (Tok::LParen, 1),
            (')', _) => (Tok::RParen, 1),
            ('[', _) => (Tok::LBrack, 1),
            (']', _) => (Tok::RBrack, 1),
            ('|', _) => (Tok::Bar, 1),
            ('+', _) => (Tok::Plus, 1),
            ('-', _) => (Tok::Minus, 1),
            ('*', _) => (Tok::Star, 1),
            ('/', _) => (Tok::Slash, 1),
            ('.', _) => (Tok::Dot, 1),
            _ => return Err(ParseError::at(l0, c0, format!("unexpected character {c:?}"))),
        };
        push(&mut out, tok);
        bump!(width);
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}
