use crate::word::{Word, ETHER, FINNEY};

use super::{Diagnostic, DiagnosticKind, Span};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Num(Word),
    // keywords
    Contract,
    Fn,
    Payable,
    If,
    Else,
    Require,
    Send,
    DCall,
    SelfDestruct,
    Revert,
    Let,
    Mapping,
    True,
    False,
    Uint256,
    Address,
    Bool,
    // punctuation
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Semi,
    Comma,
    Colon,
    Dot,
    Assign,
    PlusAssign,
    MinusAssign,
    Plus,
    Minus,
    Star,
    Lt,
    Gt,
    Le,
    Ge,
    EqEq,
    NotEq,
    AndAnd,
    OrOr,
    Bang,
    Arrow,
    Eof,
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

pub fn lex(src: &str) -> Result<Vec<Token>, Diagnostic> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);

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
        let span = Span { line, col };
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            bump!();
            bump!();
            loop {
                if i >= chars.len() {
                    return Err(lexical(span, "unterminated block comment"));
                }
                if chars[i] == '*' && chars.get(i + 1) == Some(&'/') {
                    bump!();
                    bump!();
                    break;
                }
                bump!();
            }
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                bump!();
            }
            let word: String = chars[start..i].iter().collect();
            let tok = match word.as_str() {
                "contract" => Tok::Contract,
                "fn" => Tok::Fn,
                "payable" => Tok::Payable,
                "if" => Tok::If,
                "else" => Tok::Else,
                "require" => Tok::Require,
                "send" => Tok::Send,
                "dcall" => Tok::DCall,
                "selfdestruct" => Tok::SelfDestruct,
                "revert" => Tok::Revert,
                "let" => Tok::Let,
                "mapping" => Tok::Mapping,
                "true" => Tok::True,
                "false" => Tok::False,
                "uint256" => Tok::Uint256,
                "address" => Tok::Address,
                "bool" => Tok::Bool,
                _ => Tok::Ident(word),
            };
            out.push(Token { tok, span });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            let hex = c == '0' && matches!(chars.get(i + 1), Some('x') | Some('X'));
            if hex {
                bump!();
                bump!();
                while i < chars.len() && chars[i].is_ascii_hexdigit() {
                    bump!();
                }
            } else {
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '_') {
                    bump!();
                }
            }
            let text: String = chars[start..i].iter().filter(|c| **c != '_').collect();
            let parsed = if hex {
                Word::from_str_radix(&text[2..], 16)
            } else {
                Word::from_str_radix(&text, 10)
            };
            let mut value = parsed.map_err(|_| lexical(span, &format!("invalid number `{text}`")))?;
            // optional denomination suffix
            let mut j = i;
            while j < chars.len() && chars[j] == ' ' {
                j += 1;
            }
            let unit_start = j;
            while j < chars.len() && chars[j].is_ascii_alphabetic() {
                j += 1;
            }
            let unit: String = chars[unit_start..j].iter().collect();
            let mult = match unit.as_str() {
                "wei" => Some(Word::from(1u8)),
                "finney" => Some(Word::from(FINNEY)),
                "ether" => Some(Word::from(ETHER)),
                _ => None,
            };
            if let Some(m) = mult {
                value = value
                    .checked_mul(m)
                    .ok_or_else(|| lexical(span, "literal overflows 256 bits"))?;
                while i < j {
                    bump!();
                }
            }
            out.push(Token { tok: Tok::Num(value), span });
            continue;
        }
        let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        let tok2 = match two.as_str() {
            "+=" => Some(Tok::PlusAssign),
            "-=" => Some(Tok::MinusAssign),
            "<=" => Some(Tok::Le),
            ">=" => Some(Tok::Ge),
            "==" => Some(Tok::EqEq),
            "!=" => Some(Tok::NotEq),
            "&&" => Some(Tok::AndAnd),
            "||" => Some(Tok::OrOr),
            "=>" => Some(Tok::Arrow),
            _ => None,
        };
        if let Some(tok) = tok2 {
            bump!();
            bump!();
            out.push(Token { tok, span });
            continue;
        }
        let tok = match c {
            '{' => Tok::LBrace,
            '}' => Tok::RBrace,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            ';' => Tok::Semi,
            ',' => Tok::Comma,
            ':' => Tok::Colon,
            '.' => Tok::Dot,
            '=' => Tok::Assign,
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '<' => Tok::Lt,
            '>' => Tok::Gt,
            '!' => Tok::Bang,
            other => return Err(lexical(span, &format!("unexpected character `{other}`"))),
        };
        bump!();
        out.push(Token { tok, span });
    }
    out.push(Token {
        tok: Tok::Eof,
        span: Span { line, col },
    });
    Ok(out)
}

fn lexical(span: Span, msg: &str) -> Diagnostic {
    Diagnostic {
        kind: DiagnosticKind::Lexical,
        span,
        message: msg.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn denominations_scale_literals() {
        let toks = lex("88 finney 1 ether 0x10").unwrap();
        assert_eq!(toks[0].tok, Tok::Num(Word::from(88u128 * FINNEY)));
        assert_eq!(toks[1].tok, Tok::Num(Word::from(ETHER)));
        assert_eq!(toks[2].tok, Tok::Num(Word::from(16u8)));
    }

    #[test]
    fn stray_character_is_a_lexical_error() {
        let err = lex("contract C {\n  # }").unwrap_err();
        assert_eq!(err.kind, DiagnosticKind::Lexical);
        assert_eq!((err.span.line, err.span.col), (2, 3));
    }
}
