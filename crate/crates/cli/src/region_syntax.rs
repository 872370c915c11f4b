//! Text syntax for LMI regions:
//!
//! ```text
//! half_plane(x0)          Re z > x0
//! left_half_plane(x0)     Re z < x0
//! disk(s) | disk(s, x0)   |z - x0| < s
//! stability_disk(delta)   |z| < 1 - delta
//! cone(s) | cone(s, x0)   |Im z| < s (Re z - x0)
//! band(s)                 |Im z| < s
//! intersect [r1, r2, ...]
//! ```

use lmisysid::LmiRegion;

use crate::error::{CliError, CliResult};

pub fn parse_region(text: &str) -> CliResult<LmiRegion> {
    let mut p = Parser { src: text, pos: 0 };
    let r = p.region()?;
    p.skip_ws();
    if p.pos != text.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(r)
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, msg: &str) -> CliError {
        CliError::input(format!("region '{}' at column {}: {msg}", self.src, self.pos + 1))
    }

    fn skip_ws(&mut self) {
        while self.rest().starts_with(char::is_whitespace) {
            self.pos += self.rest().chars().next().map_or(0, char::len_utf8);
        }
    }

    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.rest().starts_with(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> CliResult<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.error(&format!("expected '{c}'")))
        }
    }

    fn ident(&mut self) -> CliResult<&str> {
        self.skip_ws();
        let start = self.pos;
        let len = self.rest().find(|c: char| !(c.is_ascii_alphanumeric() || c == '_')).unwrap_or(self.rest().len());
        if len == 0 {
            return Err(self.error("expected a region name"));
        }
        self.pos += len;
        Ok(&self.src[start..start + len])
    }

    fn number(&mut self) -> CliResult<f64> {
        self.skip_ws();
        let len = self
            .rest()
            .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E')))
            .unwrap_or(self.rest().len());
        let tok = &self.rest()[..len];
        let v: f64 = tok.parse().map_err(|_| self.error(&format!("'{tok}' is not a number")))?;
        if !v.is_finite() {
            return Err(self.error("parameters must be finite"));
        }
        self.pos += len;
        Ok(v)
    }

    fn region(&mut self) -> CliResult<LmiRegion> {
        let start = self.pos;
        let name = self.ident()?.to_string();
        if name == "intersect" {
            self.expect('[')?;
            let mut acc = self.region()?;
            while self.eat(',') {
                acc = acc.intersect(&self.region()?);
            }
            self.expect(']')?;
            return Ok(acc);
        }
        self.expect('(')?;
        let mut args = vec![self.number()?];
        while self.eat(',') {
            args.push(self.number()?);
        }
        self.expect(')')?;
        let arity = |lo: usize, hi: usize| -> CliResult<()> {
            if args.len() < lo || args.len() > hi {
                let want = if lo == hi { lo.to_string() } else { format!("{lo} or {hi}") };
                return Err(CliError::input(format!("{name} takes {want} parameter(s), got {}", args.len())));
            }
            Ok(())
        };
        let at = |i: usize| args.get(i).copied().unwrap_or(0.0);
        let region = match name.as_str() {
            "half_plane" => {
                arity(1, 1)?;
                LmiRegion::half_plane(at(0))
            }
            "left_half_plane" => {
                arity(1, 1)?;
                LmiRegion::left_half_plane(at(0))
            }
            "disk" => {
                arity(1, 2)?;
                LmiRegion::disk(at(0), at(1))?
            }
            "stability_disk" => {
                arity(1, 1)?;
                LmiRegion::stability_disk(at(0))?
            }
            "cone" => {
                arity(1, 2)?;
                LmiRegion::cone(at(0), at(1))?
            }
            "band" => {
                arity(1, 1)?;
                LmiRegion::band(at(0))?
            }
            _ => {
                self.pos = start;
                return Err(self.error(&format!("unknown region '{name}'")));
            }
        };
        Ok(region)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Complex;

    #[test]
    fn presets() {
        let r = parse_region("disk(0.5)").unwrap();
        assert!(r.contains_default(Complex::new(0.4, 0.0)));
        assert!(!r.contains_default(Complex::new(0.6, 0.0)));
        let r = parse_region(" cone( 1 , 0.1 ) ").unwrap();
        assert!(r.contains_default(Complex::new(1.0, 0.5)));
        assert!(!r.contains_default(Complex::new(0.05, 0.0)));
        assert_eq!(parse_region("band(2)").unwrap().block_dim(), 2);
        assert_eq!(parse_region("left_half_plane(0)").unwrap().block_dim(), 1);
        assert!(parse_region("stability_disk(0.1)").unwrap().contains_default(Complex::new(0.85, 0.0)));
    }

    #[test]
    fn intersection_nests() {
        let r = parse_region("intersect [half_plane(0.3), disk(0.998, 0)]").unwrap();
        assert_eq!(r.block_dim(), 3);
        assert!(r.contains_default(Complex::new(0.5, 0.0)));
        assert!(!r.contains_default(Complex::new(0.2, 0.0)));
        let r = parse_region("intersect[band(1), intersect[half_plane(0), disk(2)]]").unwrap();
        assert_eq!(r.block_dim(), 5);
    }

    #[test]
    fn errors_carry_position() {
        let e = parse_region("disk(0.5").unwrap_err().to_string();
        assert!(e.contains("expected ')'"), "{e}");
        let e = parse_region("square(1)").unwrap_err().to_string();
        assert!(e.contains("unknown region 'square'") && e.contains("column 1"), "{e}");
        assert!(parse_region("disk(1, 2, 3)").is_err());
        assert!(parse_region("disk(-1)").is_err());
        assert!(parse_region("disk(1) x").is_err());
        assert!(parse_region("half_plane(abc)").is_err());
    }
}
