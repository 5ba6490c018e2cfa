//! Prime-field arithmetic.
//!
//! A [`FieldSpec`] is a validated prime modulus. An [`Fe`] is a canonical
//! residue in `[0, q)` that carries its modulus, so mixing elements of
//! different fields is caught at the operation that mixes them.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use serde::{Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GfError {
    #[error("modulus {0} is not prime")]
    NotPrime(u64),
    #[error("modulus mismatch: {0} vs {1}")]
    ModulusMismatch(u64, u64),
    #[error("inverse of zero")]
    InverseOfZero,
}

/// A prime field `F_q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldSpec {
    q: u64,
}

impl FieldSpec {
    /// Validates that `q` is prime.
    pub fn new(q: u64) -> Result<Self, GfError> {
        if is_prime(q) {
            Ok(Self { q })
        } else {
            Err(GfError::NotPrime(q))
        }
    }

    pub fn modulus(&self) -> u64 {
        self.q
    }

    /// Reduces an arbitrary integer into the field.
    pub fn elem(&self, v: u64) -> Fe {
        Fe { value: v % self.q, q: self.q }
    }

    pub fn from_i64(&self, v: i64) -> Fe {
        Fe { value: (v as i128).rem_euclid(self.q as i128) as u64, q: self.q }
    }

    pub fn zero(&self) -> Fe {
        Fe { value: 0, q: self.q }
    }

    pub fn one(&self) -> Fe {
        self.elem(1)
    }

    /// All `q` elements in increasing order.
    pub fn elements(&self) -> impl Iterator<Item = Fe> + '_ {
        (0..self.q).map(move |v| Fe { value: v, q: self.q })
    }

    pub fn elems(&self, values: &[u64]) -> Vec<Fe> {
        values.iter().map(|&v| self.elem(v)).collect()
    }

    /// The smallest prime `p >= at_least`.
    pub fn smallest_at_least(at_least: u64) -> Self {
        let mut q = at_least.max(2);
        while !is_prime(q) {
            q += 1;
        }
        Self { q }
    }
}

/// A field element: canonical residue plus its modulus.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Fe {
    value: u64,
    q: u64,
}

impl Fe {
    pub fn value(self) -> u64 {
        self.value
    }

    pub fn modulus(self) -> u64 {
        self.q
    }

    pub fn field(self) -> FieldSpec {
        FieldSpec { q: self.q }
    }

    pub fn is_zero(self) -> bool {
        self.value == 0
    }

    fn same_field(self, other: Fe) -> Result<(), GfError> {
        if self.q == other.q {
            Ok(())
        } else {
            Err(GfError::ModulusMismatch(self.q, other.q))
        }
    }

    pub fn checked_add(self, rhs: Fe) -> Result<Fe, GfError> {
        self.same_field(rhs)?;
        let s = self.value as u128 + rhs.value as u128;
        let value = if s >= self.q as u128 { (s - self.q as u128) as u64 } else { s as u64 };
        Ok(Fe { value, q: self.q })
    }

    pub fn checked_sub(self, rhs: Fe) -> Result<Fe, GfError> {
        self.same_field(rhs)?;
        let value = if self.value >= rhs.value {
            self.value - rhs.value
        } else {
            self.q - (rhs.value - self.value)
        };
        Ok(Fe { value, q: self.q })
    }

    pub fn checked_mul(self, rhs: Fe) -> Result<Fe, GfError> {
        self.same_field(rhs)?;
        Ok(Fe { value: mul_mod(self.value, rhs.value, self.q), q: self.q })
    }

    /// Square-and-multiply; `0^0 = 1`.
    pub fn pow(self, mut e: u64) -> Fe {
        let mut base = self.value;
        let mut acc = 1 % self.q;
        while e > 0 {
            if e & 1 == 1 {
                acc = mul_mod(acc, base, self.q);
            }
            base = mul_mod(base, base, self.q);
            e >>= 1;
        }
        Fe { value: acc, q: self.q }
    }

    /// Multiplicative inverse via the extended Euclidean algorithm.
    pub fn inv(self) -> Result<Fe, GfError> {
        if self.value == 0 {
            return Err(GfError::InverseOfZero);
        }
        let (mut r0, mut r1) = (self.q as i128, self.value as i128);
        let (mut t0, mut t1) = (0i128, 1i128);
        while r1 != 0 {
            let quot = r0 / r1;
            (r0, r1) = (r1, r0 - quot * r1);
            (t0, t1) = (t1, t0 - quot * t1);
        }
        debug_assert_eq!(r0, 1);
        Ok(Fe { value: t0.rem_euclid(self.q as i128) as u64, q: self.q })
    }
}

impl fmt::Debug for Fe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl fmt::Display for Fe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl Serialize for Fe {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u64(self.value)
    }
}

// The operator impls panic on mismatched moduli; use the `checked_*` forms
// where the operands come from untrusted input.
macro_rules! binop {
    ($tr:ident, $method:ident, $checked:ident, $atr:ident, $amethod:ident) => {
        impl $tr for Fe {
            type Output = Fe;
            fn $method(self, rhs: Fe) -> Fe {
                match self.$checked(rhs) {
                    Ok(v) => v,
                    Err(e) => panic!("{e}"),
                }
            }
        }

        impl $atr for Fe {
            fn $amethod(&mut self, rhs: Fe) {
                *self = $tr::$method(*self, rhs);
            }
        }
    };
}

binop!(Add, add, checked_add, AddAssign, add_assign);
binop!(Sub, sub, checked_sub, SubAssign, sub_assign);
binop!(Mul, mul, checked_mul, MulAssign, mul_assign);

impl Neg for Fe {
    type Output = Fe;
    fn neg(self) -> Fe {
        let value = if self.value == 0 { 0 } else { self.q - self.value };
        Fe { value, q: self.q }
    }
}

fn mul_mod(a: u64, b: u64, q: u64) -> u64 {
    ((a as u128 * b as u128) % q as u128) as u64
}

fn pow_mod(mut base: u64, mut e: u64, q: u64) -> u64 {
    let mut acc = 1 % q;
    base %= q;
    while e > 0 {
        if e & 1 == 1 {
            acc = mul_mod(acc, base, q);
        }
        base = mul_mod(base, base, q);
        e >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin, exact for every `u64`.
pub fn is_prime(n: u64) -> bool {
    const WITNESSES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for &p in &WITNESSES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'witness: for &a in &WITNESSES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}
