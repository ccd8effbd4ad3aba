//! The operation set: arities, concrete implementations and attributes.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::cmp::Ordering;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use sha2::{Digest, Sha256};

use crate::bits::{BitString, WordParams};

pub const ADD_B: &str = "+b";
pub const SUB_B: &str = "-b";
pub const MUL_B: &str = "*b";
pub const ADD_N: &str = "+N";
pub const SUB_N: &str = "-N";
pub const EQ: &str = "=";
pub const LE: &str = "<=";
pub const LT: &str = "<";
pub const GT: &str = ">";
pub const GE: &str = ">=";
pub const SLT: &str = "<s";
pub const NOT: &str = "not";
pub const OR: &str = "or";
pub const AND: &str = "and";
pub const NONCE: &str = "nonce";
pub const EQF: &str = "eq";
pub const CMP: &str = "cmp";

/// Infix spellings understood by the expression parser, with binding strength.
pub const INFIX: &[(&str, u8)] = &[
    (EQ, 1),
    (LE, 1),
    (LT, 1),
    (GT, 1),
    (GE, 1),
    (SLT, 1),
    (ADD_B, 3),
    (SUB_B, 3),
    (ADD_N, 3),
    (SUB_N, 3),
    (MUL_B, 4),
];

pub fn infix_level(name: &str) -> Option<u8> {
    INFIX.iter().find(|(n, _)| *n == name).map(|(_, l)| *l)
}

/// Comparisons returning `i1`/`i0`.
pub fn is_comparison(name: &str) -> bool {
    matches!(name, EQ | LE | LT | GT | GE | SLT)
}

pub fn is_connective(name: &str) -> bool {
    matches!(name, NOT | OR | AND)
}

pub type OpFn = Arc<dyn Fn(&[BitString], &WordParams) -> Option<BitString> + Send + Sync>;

/// Result length of an operation, as a function of its arguments.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LenSpec {
    /// `len(op(..)) = bits`
    Fixed(u64),
    /// `len(op(..)) = len(args[arg]) + extra`
    ArgPlus { arg: usize, extra: u64 },
}

#[derive(Clone)]
pub struct OpDef {
    pub name: String,
    pub arity: usize,
    pub func: OpFn,
    pub deterministic: bool,
    pub cryptographic: bool,
    /// `op(a, b) = i0` holds exactly when `a = b`.
    pub compare: bool,
    /// Defined on every argument tuple.
    pub total: bool,
    pub len_spec: Option<LenSpec>,
    /// Event tag constructor: `tag(x) = "tag:" @ x`.
    pub event_tag: bool,
}

impl core::fmt::Debug for OpDef {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("OpDef")
            .field("name", &self.name)
            .field("arity", &self.arity)
            .field("cryptographic", &self.cryptographic)
            .field("compare", &self.compare)
            .field("total", &self.total)
            .field("len_spec", &self.len_spec)
            .finish()
    }
}

impl OpDef {
    pub fn new(name: &str, arity: usize, func: OpFn) -> Self {
        OpDef {
            name: String::from(name),
            arity,
            func,
            deterministic: true,
            cryptographic: false,
            compare: false,
            total: false,
            len_spec: None,
            event_tag: false,
        }
    }

    pub fn apply(&self, args: &[BitString], params: &WordParams) -> Option<BitString> {
        if args.len() != self.arity {
            return None;
        }
        (self.func)(args, params)
    }
}

/// Registered operations, keyed by name.
#[derive(Clone, Debug, Default)]
pub struct OpSet {
    defs: BTreeMap<String, OpDef>,
}

fn bool_word(b: bool, p: &WordParams) -> BitString {
    if b {
        p.one()
    } else {
        p.zero()
    }
}

fn modular(n: BigUint, len: usize) -> BitString {
    let m = n % (BigUint::one() << len);
    BitString::from_val(&m, len).expect("reduced value fits")
}

fn add_b(a: &BitString, b: &BitString) -> Option<BitString> {
    (a.len() == b.len()).then(|| modular(a.val() + b.val(), a.len()))
}

fn sub_b(a: &BitString, b: &BitString) -> Option<BitString> {
    (a.len() == b.len()).then(|| {
        let modulus = BigUint::one() << a.len();
        modular(a.val() + &modulus - (b.val() % &modulus), a.len())
    })
}

fn mul_b(a: &BitString, b: &BitString) -> Option<BitString> {
    (a.len() == b.len()).then(|| modular(a.val() * b.val(), a.len()))
}

fn signed_lt(a: &BitString, b: &BitString) -> Option<bool> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let top = a.len() - 1;
    match (a.get(top), b.get(top)) {
        (true, false) => Some(true),
        (false, true) => Some(false),
        _ => Some(a.cmp_val(b) == Ordering::Less),
    }
}

fn truthy(b: &BitString) -> bool {
    b.significant_bits() != 0
}

/// Deterministic stand-in for a keyed function: SHA-256 over the tag and the
/// length-prefixed arguments, stretched or truncated to `bits`.
pub fn stub_digest(tag: &str, args: &[&BitString], bits: usize) -> BitString {
    let mut out = BitString::empty();
    let mut counter = 0u32;
    while out.len() < bits {
        let mut h = Sha256::new();
        h.update(counter.to_le_bytes());
        h.update((tag.len() as u64).to_le_bytes());
        h.update(tag.as_bytes());
        for a in args {
            h.update((a.len() as u64).to_le_bytes());
            h.update(a.as_bytes());
        }
        let block = BitString::from_bytes(h.finalize().as_slice());
        out = out.concat(&block);
        counter += 1;
    }
    out.sub(0, bits).expect("long enough")
}

fn tagged(tag: &str, body: &BitString) -> BitString {
    BitString::from_ascii(tag).concat(body)
}

fn untag(tag: &str, b: &BitString) -> Option<BitString> {
    let t = BitString::from_ascii(tag);
    (b.len() >= t.len() && b.sub(0, t.len())? == t).then(|| b.sub(t.len(), b.len() - t.len()))?
}

const KEY_ID_BITS: usize = 32;

fn arc(f: impl Fn(&[BitString], &WordParams) -> Option<BitString> + Send + Sync + 'static) -> OpFn {
    Arc::new(f)
}

impl OpSet {
    pub fn new() -> Self {
        OpSet::default()
    }

    pub fn insert(&mut self, def: OpDef) {
        self.defs.insert(def.name.clone(), def);
    }

    pub fn get(&self, name: &str) -> Option<&OpDef> {
        self.defs.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.defs.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &OpDef> {
        self.defs.values()
    }

    pub fn is_cryptographic(&self, name: &str) -> bool {
        self.get(name).is_some_and(|d| d.cryptographic)
    }

    pub fn is_event_tag(&self, name: &str) -> bool {
        self.get(name).is_some_and(|d| d.event_tag)
    }

    /// Arithmetic, comparisons, connectives, `nonce` and `eq`.
    pub fn builtins() -> Self {
        let mut s = OpSet::new();
        let total = |mut d: OpDef| {
            d.total = true;
            d
        };
        s.insert(OpDef::new(ADD_B, 2, arc(|a, _| add_b(&a[0], &a[1]))));
        s.insert(OpDef::new(SUB_B, 2, arc(|a, _| sub_b(&a[0], &a[1]))));
        s.insert(OpDef::new(MUL_B, 2, arc(|a, _| mul_b(&a[0], &a[1]))));
        s.insert(total(OpDef::new(ADD_N, 2, arc(|a, p| Some(p.bs_big(&(a[0].val() + a[1].val())))))));
        s.insert(OpDef::new(
            SUB_N,
            2,
            arc(|a, p| (a[0].cmp_val(&a[1]) != Ordering::Less).then(|| p.bs_big(&(a[0].val() - a[1].val())))),
        ));
        let cmp_op = |name: &str, pred: fn(Ordering) -> bool| {
            let mut d = OpDef::new(name, 2, arc(move |a, p| Some(bool_word(pred(a[0].cmp_val(&a[1])), p))));
            d.total = true;
            d
        };
        s.insert(cmp_op(EQ, |o| o == Ordering::Equal));
        s.insert(cmp_op(LE, |o| o != Ordering::Greater));
        s.insert(cmp_op(LT, |o| o == Ordering::Less));
        s.insert(cmp_op(GT, |o| o == Ordering::Greater));
        s.insert(cmp_op(GE, |o| o != Ordering::Less));
        s.insert(OpDef::new(SLT, 2, arc(|a, p| signed_lt(&a[0], &a[1]).map(|b| bool_word(b, p)))));
        s.insert(total(OpDef::new(NOT, 1, arc(|a, p| Some(bool_word(!truthy(&a[0]), p))))));
        s.insert(total(OpDef::new(OR, 2, arc(|a, p| Some(bool_word(truthy(&a[0]) || truthy(&a[1]), p))))));
        s.insert(total(OpDef::new(AND, 2, arc(|a, p| Some(bool_word(truthy(&a[0]) && truthy(&a[1]), p))))));
        let mut nonce = total(OpDef::new(NONCE, 1, arc(|a, _| Some(tagged("n", &a[0])))));
        nonce.len_spec = Some(LenSpec::ArgPlus { arg: 0, extra: 8 });
        s.insert(nonce);
        s.insert(OpDef::new(EQF, 2, arc(|a, _| (a[0] == a[1]).then(|| a[0].clone()))));
        s
    }

    /// Builtins plus the opaque cryptographic stubs and common event tags.
    pub fn standard(_params: &WordParams) -> Self {
        let mut s = OpSet::builtins();
        let crypto = |name: &str, arity: usize, len: Option<LenSpec>, total: bool, f: OpFn| {
            let mut d = OpDef::new(name, arity, f);
            d.cryptographic = true;
            d.total = total;
            d.len_spec = len;
            d
        };
        s.insert(crypto("mac", 2, Some(LenSpec::Fixed(20)), true, arc(|a, _| Some(stub_digest("mac", &[&a[0], &a[1]], 20)))));
        s.insert(crypto("hmac", 2, Some(LenSpec::Fixed(160)), true, arc(|a, _| Some(stub_digest("hmac", &[&a[0], &a[1]], 160)))));
        s.insert(crypto("sha1", 1, Some(LenSpec::Fixed(160)), true, arc(|a, _| Some(stub_digest("sha1", &[&a[0]], 160)))));
        s.insert(crypto("hash", 1, Some(LenSpec::Fixed(16)), true, arc(|a, _| Some(stub_digest("hash", &[&a[0]], 16)))));

        let mut cmp = OpDef::new(CMP, 2, arc(|a, p| Some(bool_word(a[0] != a[1], p))));
        cmp.compare = true;
        cmp.total = true;
        s.insert(cmp);

        // Key pairs share a 32-bit identity; ciphertexts carry it in clear.
        let key_id = |seed: &BitString| stub_digest("key", &[seed], KEY_ID_BITS);
        s.insert(crypto("ek", 1, Some(LenSpec::Fixed(16 + KEY_ID_BITS as u64)), true, arc(move |a, _| Some(tagged("ek", &key_id(&a[0]))))));
        s.insert(crypto("dk", 1, Some(LenSpec::Fixed(16 + KEY_ID_BITS as u64)), true, arc(move |a, _| Some(tagged("dk", &key_id(&a[0]))))));
        s.insert(crypto("pk", 1, Some(LenSpec::Fixed(16 + KEY_ID_BITS as u64)), true, arc(move |a, _| Some(tagged("pk", &key_id(&a[0]))))));
        s.insert(crypto("sk", 1, Some(LenSpec::Fixed(16 + KEY_ID_BITS as u64)), true, arc(move |a, _| Some(tagged("sk", &key_id(&a[0]))))));
        fn enc(key: &BitString, m: &BitString) -> Option<BitString> {
            let id = untag("ek", key).or_else(|| untag("pk", key))?;
            (id.len() == KEY_ID_BITS).then(|| tagged("E", &id.concat(m)))
        }
        fn dec(key: &BitString, c: &BitString) -> Option<BitString> {
            let id = untag("dk", key).or_else(|| untag("sk", key))?;
            let body = untag("E", c)?;
            (body.len() >= KEY_ID_BITS && body.sub(0, KEY_ID_BITS)? == id).then(|| body.sub(KEY_ID_BITS, body.len() - KEY_ID_BITS))?
        }
        let ct = Some(LenSpec::ArgPlus { arg: 1, extra: 8 + KEY_ID_BITS as u64 });
        s.insert(crypto("E", 3, ct.clone(), false, arc(|a, _| enc(&a[0], &a[1]))));
        s.insert(crypto("encrypt", 2, ct, false, arc(|a, _| enc(&a[0], &a[1]))));
        s.insert(crypto("D", 2, None, false, arc(|a, _| dec(&a[0], &a[1]))));
        s.insert(crypto("decrypt", 2, None, false, arc(|a, _| dec(&a[0], &a[1]))));
        s.insert(crypto("isek", 1, None, false, arc(|a, _| untag("ek", &a[0]).map(|_| a[0].clone()))));
        s.insert(crypto("isenc", 1, None, false, arc(|a, _| untag("E", &a[0]).map(|_| a[0].clone()))));
        s.insert(crypto(
            "ekof",
            1,
            None,
            false,
            arc(|a, _| {
                let body = untag("E", &a[0])?;
                Some(tagged("ek", &body.sub(0, KEY_ID_BITS)?))
            }),
        ));
        fn pair(a: &BitString, b: &BitString, p: &WordParams) -> BitString {
            tagged("P", &p.bs_usize(a.len()).concat(a).concat(b))
        }
        fn unpair(c: &BitString, p: &WordParams) -> Option<(BitString, BitString)> {
            let body = untag("P", c)?;
            let w = p.width();
            let l = body.sub(0, w)?.val_usize()?;
            let rest = body.len().checked_sub(w + l)?;
            Some((body.sub(w, l)?, body.sub(w + l, rest)?))
        }
        s.insert(crypto("pair", 2, None, true, arc(|a, p| Some(pair(&a[0], &a[1], p)))));
        s.insert(crypto("fst", 1, None, false, arc(|a, p| unpair(&a[0], p).map(|x| x.0))));
        s.insert(crypto("snd", 1, None, false, arc(|a, p| unpair(&a[0], p).map(|x| x.1))));
        for tag in ["acc", "accept", "request", "begin", "end"] {
            s.register_event_tag(tag);
        }
        s
    }

    /// Registers `tag/1` with implementation `tag(x) = "tag:" @ x`.
    pub fn register_event_tag(&mut self, tag: &str) {
        let prefix = BitString::from_ascii(&alloc::format!("{tag}:"));
        let extra = prefix.len() as u64;
        let mut d = OpDef::new(tag, 1, arc(move |a, _| Some(prefix.concat(&a[0]))));
        d.total = true;
        d.event_tag = true;
        d.len_spec = Some(LenSpec::ArgPlus { arg: 0, extra });
        self.insert(d);
    }

    /// Registers an opaque deterministic stub `name/arity` producing `out_bits` bits.
    pub fn register_stub(&mut self, name: &str, arity: usize, out_bits: usize, cryptographic: bool) {
        let tag = String::from(name);
        let mut d = OpDef::new(
            name,
            arity,
            arc(move |a, _| {
                let refs: Vec<&BitString> = a.iter().collect();
                Some(stub_digest(&tag, &refs, out_bits))
            }),
        );
        d.total = true;
        d.cryptographic = cryptographic;
        d.len_spec = Some(LenSpec::Fixed(out_bits as u64));
        self.insert(d);
    }
}

/// Splits an event payload `tag:x` into its tag and payload.
pub fn split_event_tag(b: &BitString) -> Option<(String, BitString)> {
    if !b.is_byte_aligned() && b.len() < 8 {
        return None;
    }
    let whole_bytes = b.len() / 8;
    let bytes = &b.as_bytes()[..whole_bytes];
    let colon = bytes.iter().position(|c| *c == b':')?;
    let tag = core::str::from_utf8(&bytes[..colon]).ok()?;
    if tag.is_empty() || !tag.bytes().all(|c| c.is_ascii_alphanumeric() || c == b'_') {
        return None;
    }
    let start = (colon + 1) * 8;
    Some((String::from(tag), b.sub(start, b.len() - start)?))
}

pub fn is_zero(b: &BitString) -> bool {
    b.val().is_zero()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comparisons_exhaustive_at_width_4() {
        let p = WordParams::new(4);
        let ops = OpSet::builtins();
        for a in 0..16u64 {
            for b in 0..16u64 {
                let (x, y) = (p.bs(a), p.bs(b));
                let run = |n: &str| ops.get(n).unwrap().apply(&[x.clone(), y.clone()], &p).unwrap();
                assert_eq!(run(EQ), bool_word(a == b, &p));
                assert_eq!(run(LE), bool_word(a <= b, &p));
                assert_eq!(run(LT), bool_word(a < b, &p));
                assert_eq!(run(GT), bool_word(a > b, &p));
                assert_eq!(run(ADD_B).val_u64(), Some((a + b) % 16));
                assert_eq!(run(SUB_B).val_u64(), Some((a + 16 - b) % 16));
                assert_eq!(run(ADD_N).val_u64(), Some(a + b));
                assert_eq!(ops.get(SUB_N).unwrap().apply(&[x.clone(), y.clone()], &p).map(|r| r.val_u64().unwrap()), a.checked_sub(b));
                let sa = if a >= 8 { a as i64 - 16 } else { a as i64 };
                let sb = if b >= 8 { b as i64 - 16 } else { b as i64 };
                assert_eq!(run(SLT), bool_word(sa < sb, &p));
            }
        }
    }

    #[test]
    fn word_ops_reject_unequal_lengths() {
        let ops = OpSet::builtins();
        let p = WordParams::new(8);
        let a = WordParams::new(4).bs(3);
        assert_eq!(ops.get(ADD_B).unwrap().apply(&[a.clone(), p.bs(1)], &p), None);
        assert_eq!(ops.get(SUB_B).unwrap().apply(&[a, p.bs(1)], &p), None);
    }

    #[test]
    fn stubs_behave() {
        let p = WordParams::new(32);
        let ops = OpSet::standard(&p);
        let k = BitString::from_ascii("key");
        let m = BitString::from_ascii("hello");
        let mac = ops.get("mac").unwrap().apply(&[k.clone(), m.clone()], &p).unwrap();
        assert_eq!(mac.len(), 20);
        let sha = ops.get("sha1").unwrap().apply(std::slice::from_ref(&m), &p).unwrap();
        assert_eq!(sha.len(), 160);
        let cmp = ops.get(CMP).unwrap();
        assert_eq!(cmp.apply(&[m.clone(), m.clone()], &p), Some(p.zero()));
        assert_eq!(cmp.apply(&[m.clone(), k.clone()], &p), Some(p.one()));
        let ek = ops.get("ek").unwrap().apply(std::slice::from_ref(&k), &p).unwrap();
        let dk = ops.get("dk").unwrap().apply(std::slice::from_ref(&k), &p).unwrap();
        let c = ops.get("E").unwrap().apply(&[ek.clone(), m.clone(), k.clone()], &p).unwrap();
        assert_eq!(c.len(), m.len() + 40);
        assert_eq!(ops.get("D").unwrap().apply(&[dk, c.clone()], &p), Some(m.clone()));
        let wrong = ops.get("dk").unwrap().apply(std::slice::from_ref(&m), &p).unwrap();
        assert_eq!(ops.get("D").unwrap().apply(&[wrong, c.clone()], &p), None);
        assert_eq!(ops.get("ekof").unwrap().apply(std::slice::from_ref(&c), &p), Some(ek.clone()));
        assert_eq!(ops.get("isek").unwrap().apply(std::slice::from_ref(&ek), &p), Some(ek));
        let pr = ops.get("pair").unwrap().apply(&[k.clone(), m.clone()], &p).unwrap();
        assert_eq!(ops.get("fst").unwrap().apply(std::slice::from_ref(&pr), &p), Some(k.clone()));
        assert_eq!(ops.get("snd").unwrap().apply(&[pr], &p), Some(m.clone()));
        assert_eq!(ops.get(EQF).unwrap().apply(&[k.clone(), k.clone()], &p), Some(k.clone()));
        assert_eq!(ops.get(EQF).unwrap().apply(&[k.clone(), m.clone()], &p), None);
    }

    #[test]
    fn event_tags_split() {
        let p = WordParams::new(32);
        let ops = OpSet::standard(&p);
        let x = BitString::from_bits([true, false, true]);
        let ev = ops.get("accept").unwrap().apply(std::slice::from_ref(&x), &p).unwrap();
        assert_eq!(split_event_tag(&ev), Some((String::from("accept"), x)));
        assert_eq!(split_event_tag(&BitString::from_ascii("nocolon")), None);
    }
}
