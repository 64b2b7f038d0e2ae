//! Command-word encoding.
//!
//! The first word of every instruction carries the 6-bit opcode and
//! nothing else. Operand and control fields follow as one little-endian
//! bit stream, packed into as many `word_width`-bit words as needed:
//!
//! | instruction          | payload (LSB first)                          |
//! |----------------------|----------------------------------------------|
//! | `pim_enable/disable` | none                                         |
//! | `broadcast_disable`  | none                                         |
//! | `broadcast_enable`   | `bank_bc:1, col_bc:1`                        |
//! | `pim_add/mul/mul_red`| `r_dst:16, r_src1:16, r_src2:16, prec:4`     |
//! | `pim_add_parallel`   | `r_dst:16, r_src1:16, r_src2:16`             |
//!
//! A row-group address packs `subarray << 8 | row`.

use std::fmt;
use std::str::FromStr;

use super::IsaError;

pub const OPCODE_BITS: u32 = 6;
pub const ADDR_BITS: u32 = 16;
pub const PREC_BITS: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Opcode {
    BroadcastEnable = 0b000000,
    BroadcastDisable = 0b000001,
    PimEnable = 0b000010,
    PimDisable = 0b000011,
    PimAdd = 0b010000,
    PimMul = 0b010001,
    PimMulRed = 0b010010,
    PimAddParallel = 0b010011,
}

impl Opcode {
    pub const ALL: [Opcode; 8] = [
        Opcode::BroadcastEnable,
        Opcode::BroadcastDisable,
        Opcode::PimEnable,
        Opcode::PimDisable,
        Opcode::PimAdd,
        Opcode::PimMul,
        Opcode::PimMulRed,
        Opcode::PimAddParallel,
    ];

    pub fn from_bits(bits: u64) -> Result<Opcode, IsaError> {
        Opcode::ALL
            .into_iter()
            .find(|op| *op as u64 == bits)
            .ok_or(IsaError::UnknownOpcode(bits))
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::BroadcastEnable => "broadcast_enable",
            Opcode::BroadcastDisable => "broadcast_disable",
            Opcode::PimEnable => "pim_enable",
            Opcode::PimDisable => "pim_disable",
            Opcode::PimAdd => "pim_add",
            Opcode::PimMul => "pim_mul",
            Opcode::PimMulRed => "pim_mul_red",
            Opcode::PimAddParallel => "pim_add_parallel",
        }
    }
}

/// Start of an operand in a bank: a subarray index and a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RowGroup {
    pub subarray: u8,
    pub row: u8,
}

impl RowGroup {
    pub fn new(subarray: u8, row: u8) -> Self {
        RowGroup { subarray, row }
    }

    pub fn packed(self) -> u16 {
        (u16::from(self.subarray) << 8) | u16::from(self.row)
    }

    pub fn unpack(v: u16) -> Self {
        RowGroup {
            subarray: (v >> 8) as u8,
            row: (v & 0xFF) as u8,
        }
    }
}

impl fmt::Display for RowGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.subarray, self.row)
    }
}

impl FromStr for RowGroup {
    type Err = IsaError;

    fn from_str(s: &str) -> Result<Self, IsaError> {
        let bad = || IsaError::Syntax(format!("bad row group `{s}`"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        Ok(RowGroup {
            subarray: a.parse().map_err(|_| bad())?,
            row: b.parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Operands {
    pub dst: RowGroup,
    pub src1: RowGroup,
    pub src2: RowGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PimInstruction {
    PimEnable,
    PimDisable,
    BroadcastEnable { bank_bc: bool, col_bc: bool },
    BroadcastDisable,
    PimAdd { ops: Operands, prec: u8 },
    PimMul { ops: Operands, prec: u8 },
    PimMulRed { ops: Operands, prec: u8 },
    PimAddParallel { ops: Operands },
}

impl PimInstruction {
    pub fn opcode(&self) -> Opcode {
        match self {
            PimInstruction::PimEnable => Opcode::PimEnable,
            PimInstruction::PimDisable => Opcode::PimDisable,
            PimInstruction::BroadcastEnable { .. } => Opcode::BroadcastEnable,
            PimInstruction::BroadcastDisable => Opcode::BroadcastDisable,
            PimInstruction::PimAdd { .. } => Opcode::PimAdd,
            PimInstruction::PimMul { .. } => Opcode::PimMul,
            PimInstruction::PimMulRed { .. } => Opcode::PimMulRed,
            PimInstruction::PimAddParallel { .. } => Opcode::PimAddParallel,
        }
    }

    pub fn precision(&self) -> Option<u8> {
        match self {
            PimInstruction::PimAdd { prec, .. }
            | PimInstruction::PimMul { prec, .. }
            | PimInstruction::PimMulRed { prec, .. } => Some(*prec),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), IsaError> {
        match self.precision() {
            Some(p) if p == 0 || u32::from(p) >= 1 << PREC_BITS => Err(IsaError::BadPrecision(u32::from(p))),
            _ => Ok(()),
        }
    }

    fn payload(&self) -> (u64, u32) {
        let addrs = |o: &Operands| {
            u64::from(o.dst.packed())
                | u64::from(o.src1.packed()) << ADDR_BITS
                | u64::from(o.src2.packed()) << (2 * ADDR_BITS)
        };
        match self {
            PimInstruction::PimEnable | PimInstruction::PimDisable | PimInstruction::BroadcastDisable => {
                (0, 0)
            }
            PimInstruction::BroadcastEnable { bank_bc, col_bc } => {
                (u64::from(*bank_bc) | u64::from(*col_bc) << 1, 2)
            }
            PimInstruction::PimAdd { ops, prec }
            | PimInstruction::PimMul { ops, prec }
            | PimInstruction::PimMulRed { ops, prec } => (
                addrs(ops) | u64::from(*prec) << (3 * ADDR_BITS),
                3 * ADDR_BITS + PREC_BITS,
            ),
            PimInstruction::PimAddParallel { ops } => (addrs(ops), 3 * ADDR_BITS),
        }
    }
}

fn payload_bits(op: Opcode) -> u32 {
    match op {
        Opcode::PimEnable | Opcode::PimDisable | Opcode::BroadcastDisable => 0,
        Opcode::BroadcastEnable => 2,
        Opcode::PimAdd | Opcode::PimMul | Opcode::PimMulRed => 3 * ADDR_BITS + PREC_BITS,
        Opcode::PimAddParallel => 3 * ADDR_BITS,
    }
}

fn check_width(word_width: u32) -> Result<(), IsaError> {
    if !(OPCODE_BITS..=64).contains(&word_width) {
        return Err(IsaError::BadWordWidth(word_width));
    }
    Ok(())
}

fn mask(bits: u32) -> u64 {
    if bits >= 64 {
        u64::MAX
    } else {
        (1u64 << bits) - 1
    }
}

/// Encodes one instruction into command words of `word_width` bits.
pub fn encode(instr: &PimInstruction, word_width: u32) -> Result<Vec<u64>, IsaError> {
    check_width(word_width)?;
    instr.validate()?;
    let (payload, bits) = instr.payload();
    let mut words = vec![instr.opcode() as u64];
    let mut shift = 0;
    while shift < bits {
        words.push((payload >> shift) & mask(word_width));
        shift += word_width;
    }
    Ok(words)
}

/// Decodes the instruction at the head of `words`; returns it together with
/// the number of words consumed.
pub fn decode(words: &[u64], word_width: u32) -> Result<(PimInstruction, usize), IsaError> {
    check_width(word_width)?;
    let head = *words.first().ok_or(IsaError::Truncated)?;
    let op = Opcode::from_bits(head)?;
    let bits = payload_bits(op);
    let n = bits.div_ceil(word_width) as usize;
    if words.len() < 1 + n {
        return Err(IsaError::Truncated);
    }
    let mut payload = 0u64;
    for (i, &w) in words[1..=n].iter().enumerate() {
        if w & !mask(word_width) != 0 {
            return Err(IsaError::Malformed("word exceeds the bus width"));
        }
        payload |= w << (i as u32 * word_width);
    }
    if payload & !mask(bits) != 0 {
        return Err(IsaError::Malformed("nonzero padding bits"));
    }
    let addr = |k: u32| RowGroup::unpack(((payload >> (k * ADDR_BITS)) & 0xFFFF) as u16);
    let ops = Operands {
        dst: addr(0),
        src1: addr(1),
        src2: addr(2),
    };
    let prec = ((payload >> (3 * ADDR_BITS)) & mask(PREC_BITS)) as u8;
    let instr = match op {
        Opcode::PimEnable => PimInstruction::PimEnable,
        Opcode::PimDisable => PimInstruction::PimDisable,
        Opcode::BroadcastDisable => PimInstruction::BroadcastDisable,
        Opcode::BroadcastEnable => PimInstruction::BroadcastEnable {
            bank_bc: payload & 1 == 1,
            col_bc: payload & 2 == 2,
        },
        Opcode::PimAdd => PimInstruction::PimAdd { ops, prec },
        Opcode::PimMul => PimInstruction::PimMul { ops, prec },
        Opcode::PimMulRed => PimInstruction::PimMulRed { ops, prec },
        Opcode::PimAddParallel => PimInstruction::PimAddParallel { ops },
    };
    instr.validate()?;
    Ok((instr, 1 + n))
}

pub fn encode_program(prog: &[PimInstruction], word_width: u32) -> Result<Vec<u64>, IsaError> {
    let mut out = Vec::new();
    for instr in prog {
        out.extend(encode(instr, word_width)?);
    }
    Ok(out)
}

pub fn decode_program(mut words: &[u64], word_width: u32) -> Result<Vec<PimInstruction>, IsaError> {
    let mut out = Vec::new();
    while !words.is_empty() {
        let (instr, used) = decode(words, word_width)?;
        out.push(instr);
        words = &words[used..];
    }
    Ok(out)
}

impl fmt::Display for PimInstruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = self.opcode().mnemonic();
        match self {
            PimInstruction::BroadcastEnable { bank_bc, col_bc } => {
                write!(f, "{name} bank={} col={}", u8::from(*bank_bc), u8::from(*col_bc))
            }
            PimInstruction::PimAdd { ops, prec }
            | PimInstruction::PimMul { ops, prec }
            | PimInstruction::PimMulRed { ops, prec } => write!(
                f,
                "{name} dst={} src1={} src2={} prec={prec}",
                ops.dst, ops.src1, ops.src2
            ),
            PimInstruction::PimAddParallel { ops } => {
                write!(f, "{name} dst={} src1={} src2={}", ops.dst, ops.src1, ops.src2)
            }
            _ => f.write_str(name),
        }
    }
}

impl FromStr for PimInstruction {
    type Err = IsaError;

    /// Parses one line of disassembly.
    fn from_str(line: &str) -> Result<Self, IsaError> {
        let mut parts = line.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| IsaError::Syntax("empty line".into()))?;
        let op = Opcode::ALL
            .into_iter()
            .find(|o| o.mnemonic() == name)
            .ok_or_else(|| IsaError::Syntax(format!("unknown mnemonic `{name}`")))?;
        let mut fields = std::collections::BTreeMap::new();
        for p in parts {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| IsaError::Syntax(format!("bad field `{p}`")))?;
            fields.insert(k, v);
        }
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| IsaError::Syntax(format!("{name}: missing `{k}`")))
        };
        let flag = |k: &str| -> Result<bool, IsaError> {
            match get(k)? {
                "0" => Ok(false),
                "1" => Ok(true),
                v => Err(IsaError::Syntax(format!("bad flag `{k}={v}`"))),
            }
        };
        let ops = || -> Result<Operands, IsaError> {
            Ok(Operands {
                dst: get("dst")?.parse()?,
                src1: get("src1")?.parse()?,
                src2: get("src2")?.parse()?,
            })
        };
        let prec = || -> Result<u8, IsaError> {
            get("prec")?
                .parse()
                .map_err(|_| IsaError::Syntax("bad precision".into()))
        };
        let instr = match op {
            Opcode::PimEnable => PimInstruction::PimEnable,
            Opcode::PimDisable => PimInstruction::PimDisable,
            Opcode::BroadcastDisable => PimInstruction::BroadcastDisable,
            Opcode::BroadcastEnable => PimInstruction::BroadcastEnable {
                bank_bc: flag("bank")?,
                col_bc: flag("col")?,
            },
            Opcode::PimAdd => PimInstruction::PimAdd {
                ops: ops()?,
                prec: prec()?,
            },
            Opcode::PimMul => PimInstruction::PimMul {
                ops: ops()?,
                prec: prec()?,
            },
            Opcode::PimMulRed => PimInstruction::PimMulRed {
                ops: ops()?,
                prec: prec()?,
            },
            Opcode::PimAddParallel => PimInstruction::PimAddParallel { ops: ops()? },
        };
        instr.validate()?;
        Ok(instr)
    }
}

pub fn disassemble(prog: &[PimInstruction]) -> String {
    prog.iter().map(|i| format!("{i}\n")).collect()
}

pub fn assemble(text: &str) -> Result<Vec<PimInstruction>, IsaError> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::parse)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ops() -> Operands {
        Operands {
            dst: RowGroup::new(3, 0),
            src1: RowGroup::new(0, 0),
            src2: RowGroup::new(1, 5),
        }
    }

    #[test]
    fn opcodes_follow_the_command_table() {
        let w = encode(&PimInstruction::PimMul { ops: ops(), prec: 4 }, 16).unwrap();
        assert_eq!(format!("{:06b}", w[0]), "010001");
        let w = encode(&PimInstruction::PimEnable, 16).unwrap();
        assert_eq!(w, vec![0b000010]);
        let table = [
            (PimInstruction::PimDisable, "000011"),
            (
                PimInstruction::BroadcastEnable {
                    bank_bc: true,
                    col_bc: false,
                },
                "000000",
            ),
            (PimInstruction::BroadcastDisable, "000001"),
            (PimInstruction::PimAdd { ops: ops(), prec: 8 }, "010000"),
            (PimInstruction::PimMulRed { ops: ops(), prec: 8 }, "010010"),
            (PimInstruction::PimAddParallel { ops: ops() }, "010011"),
        ];
        for (instr, bits) in table {
            assert_eq!(format!("{:06b}", encode(&instr, 16).unwrap()[0]), bits);
        }
    }

    #[test]
    fn decode_known_words() {
        let (i, used) = decode(&[0b000011], 16).unwrap();
        assert_eq!((i, used), (PimInstruction::PimDisable, 1));

        let instr = PimInstruction::PimMulRed { ops: ops(), prec: 6 };
        let words = encode(&instr, 16).unwrap();
        assert_eq!(words.len(), 5);
        // prec[3:0] sits in the low nibble of the fourth payload word
        assert_eq!(words[4], 6);
        assert_eq!(decode(&words, 16).unwrap().0, instr);

        assert_eq!(decode(&[0b111111], 16), Err(IsaError::UnknownOpcode(0b111111)));
        assert_eq!(decode(&words[..3], 16), Err(IsaError::Truncated));
        assert_eq!(decode(&[], 16), Err(IsaError::Truncated));
    }

    #[test]
    fn precision_field_is_checked() {
        assert_eq!(
            encode(&PimInstruction::PimMul { ops: ops(), prec: 0 }, 16),
            Err(IsaError::BadPrecision(0))
        );
        assert_eq!(
            encode(&PimInstruction::PimMul { ops: ops(), prec: 16 }, 16),
            Err(IsaError::BadPrecision(16))
        );
        // a zero prec nibble on the wire is not a valid instruction
        let mut words = encode(&PimInstruction::PimAdd { ops: ops(), prec: 1 }, 16).unwrap();
        words[4] = 0;
        assert_eq!(decode(&words, 16), Err(IsaError::BadPrecision(0)));
    }

    #[test]
    fn disassembly_round_trip() {
        let prog = vec![
            PimInstruction::PimEnable,
            PimInstruction::BroadcastEnable {
                bank_bc: true,
                col_bc: true,
            },
            PimInstruction::PimMul { ops: ops(), prec: 4 },
            PimInstruction::PimAddParallel { ops: ops() },
            PimInstruction::PimDisable,
        ];
        let text = disassemble(&prog);
        assert!(text.contains("pim_mul dst=3:0 src1=0:0 src2=1:5 prec=4"));
        assert_eq!(assemble(&text).unwrap(), prog);
        assert!(assemble("pim_mul dst=1:1").is_err());
    }

    fn arb_group() -> impl Strategy<Value = RowGroup> + Clone {
        (any::<u8>(), any::<u8>()).prop_map(|(s, r)| RowGroup::new(s, r))
    }

    fn arb_instr() -> impl Strategy<Value = PimInstruction> {
        let ops = (arb_group(), arb_group(), arb_group()).prop_map(|(dst, src1, src2)| Operands {
            dst,
            src1,
            src2,
        });
        prop_oneof![
            Just(PimInstruction::PimEnable),
            Just(PimInstruction::PimDisable),
            Just(PimInstruction::BroadcastDisable),
            (any::<bool>(), any::<bool>())
                .prop_map(|(bank_bc, col_bc)| PimInstruction::BroadcastEnable { bank_bc, col_bc }),
            (ops.clone(), 1u8..16).prop_map(|(ops, prec)| PimInstruction::PimAdd { ops, prec }),
            (ops.clone(), 1u8..16).prop_map(|(ops, prec)| PimInstruction::PimMul { ops, prec }),
            (ops.clone(), 1u8..16).prop_map(|(ops, prec)| PimInstruction::PimMulRed { ops, prec }),
            ops.prop_map(|ops| PimInstruction::PimAddParallel { ops }),
        ]
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(
            prog in proptest::collection::vec(arb_instr(), 0..20),
            width in prop_oneof![Just(6u32), Just(8), Just(13), Just(16), Just(32), Just(64)],
        ) {
            let words = encode_program(&prog, width).unwrap();
            prop_assert!(words.iter().all(|w| width == 64 || w >> width == 0));
            prop_assert_eq!(decode_program(&words, width).unwrap(), prog);
        }

        #[test]
        fn decoded_words_reencode_identically(words in proptest::collection::vec(0u64..1 << 16, 1..8)) {
            if let Ok((instr, used)) = decode(&words, 16) {
                prop_assert_eq!(encode(&instr, 16).unwrap(), words[..used].to_vec());
            }
        }
    }
}
