//! Wire format: tagged, length-prefixed, little-endian records.
//!
//! Each frame is `from(u32) to(u32) tag(u16) len(u32)` followed by `len`
//! payload bytes; byte accounting charges the frame header plus the payload.
//! Exactly one variable-length tail is allowed per record; anything else is
//! counted or fixed-width.

use crate::error::NetError;
use crate::model::ItemId;
use crate::secagg::{KeyAdvert, MaskedInput, Share, ShareDeliver, ShareKind, ShareRequest, ShareResponse};

/// Frame header bytes charged per message in addition to the payload.
pub const HEADER_BYTES: usize = 14;

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    KeyAdvert(KeyAdvert),
    AdvertBundle(Vec<KeyAdvert>),
    ShareDeliver(ShareDeliver),
    MaskedInput(MaskedInput),
    ShareRequest(ShareRequest),
    ShareResponse(ShareResponse),
    /// Flat user-model parameters, server -> client.
    UserModelDown(Vec<f64>),
    /// Representations for the union set, server -> client.
    ReprsDown(Vec<(ItemId, Vec<f64>)>),
    /// Plaintext union contribution, client -> server.
    UnionUp(Vec<ItemId>),
    /// Plaintext weighted gradient upload, client -> server.
    GradientUp {
        user_grad: Vec<f64>,
        repr_grads: Vec<(ItemId, Vec<f64>)>,
        weighted_loss: f64,
        weight: f64,
    },
    /// Whole-model baseline: full parameter download.
    WholeModelDown { encoder: Vec<f64>, user: Vec<f64> },
    /// Whole-model baseline: full weighted gradient upload.
    WholeGradUp {
        encoder_grad: Vec<f64>,
        user_grad: Vec<f64>,
        weighted_loss: f64,
        weight: f64,
    },
}

const TAG_KEY_ADVERT: u16 = 1;
const TAG_ADVERT_BUNDLE: u16 = 2;
const TAG_SHARE_DELIVER: u16 = 3;
const TAG_MASKED_INPUT: u16 = 4;
const TAG_SHARE_REQUEST: u16 = 5;
const TAG_SHARE_RESPONSE: u16 = 6;
const TAG_USER_MODEL_DOWN: u16 = 7;
const TAG_REPRS_DOWN: u16 = 8;
const TAG_UNION_UP: u16 = 9;
const TAG_GRADIENT_UP: u16 = 10;
const TAG_WHOLE_MODEL_DOWN: u16 = 11;
const TAG_WHOLE_GRAD_UP: u16 = 12;

fn put_u32(buf: &mut Vec<u8>, x: u32) {
    buf.extend_from_slice(&x.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, x: u64) {
    buf.extend_from_slice(&x.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, x: f64) {
    buf.extend_from_slice(&x.to_le_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, xs: &[f64]) {
    for &x in xs {
        put_f64(buf, x);
    }
}

fn put_advert(buf: &mut Vec<u8>, a: &KeyAdvert) {
    put_u32(buf, a.id);
    buf.extend_from_slice(&a.sign_pk);
    buf.extend_from_slice(&a.s_pk);
    buf.extend_from_slice(&a.c_pk);
    buf.extend_from_slice(&a.signature);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> &'a [u8] {
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        s
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take(4).try_into().unwrap())
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take(8).try_into().unwrap())
    }

    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take(8).try_into().unwrap())
    }

    fn f64s(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn tail(&mut self) -> &'a [u8] {
        self.take(self.remaining())
    }

    fn advert(&mut self) -> KeyAdvert {
        KeyAdvert {
            id: self.u32(),
            sign_pk: self.take(32).try_into().unwrap(),
            s_pk: self.take(32).try_into().unwrap(),
            c_pk: self.take(32).try_into().unwrap(),
            signature: self.take(64).try_into().unwrap(),
        }
    }
}

fn kind_byte(k: ShareKind) -> u8 {
    match k {
        ShareKind::SelfMask => 0,
        ShareKind::MaskKey => 1,
    }
}

fn byte_kind(b: u8) -> ShareKind {
    if b == 0 {
        ShareKind::SelfMask
    } else {
        ShareKind::MaskKey
    }
}

impl Message {
    /// Encode into `(tag, payload)`.
    pub fn encode(&self) -> (u16, Vec<u8>) {
        let mut buf = Vec::new();
        let tag = match self {
            Message::KeyAdvert(a) => {
                put_advert(&mut buf, a);
                TAG_KEY_ADVERT
            }
            Message::AdvertBundle(adverts) => {
                put_u32(&mut buf, adverts.len() as u32);
                for a in adverts {
                    put_advert(&mut buf, a);
                }
                TAG_ADVERT_BUNDLE
            }
            Message::ShareDeliver(d) => {
                put_u32(&mut buf, d.owner);
                put_u32(&mut buf, d.holder);
                buf.extend_from_slice(&d.ciphertext);
                TAG_SHARE_DELIVER
            }
            Message::MaskedInput(m) => {
                put_u32(&mut buf, m.owner);
                for &x in &m.vector {
                    put_u64(&mut buf, x);
                }
                TAG_MASKED_INPUT
            }
            Message::ShareRequest(r) => {
                put_u32(&mut buf, r.target);
                buf.push(kind_byte(r.kind));
                TAG_SHARE_REQUEST
            }
            Message::ShareResponse(r) => {
                put_u32(&mut buf, r.target);
                buf.push(kind_byte(r.kind));
                put_u64(&mut buf, r.share.index);
                buf.extend_from_slice(&r.share.payload);
                TAG_SHARE_RESPONSE
            }
            Message::UserModelDown(params) => {
                put_f64s(&mut buf, params);
                TAG_USER_MODEL_DOWN
            }
            Message::ReprsDown(items) => {
                put_u32(&mut buf, items.len() as u32);
                let dim = items.first().map(|(_, v)| v.len()).unwrap_or(0);
                put_u32(&mut buf, dim as u32);
                for (id, v) in items {
                    put_u32(&mut buf, id.0);
                    put_f64s(&mut buf, v);
                }
                TAG_REPRS_DOWN
            }
            Message::UnionUp(items) => {
                for id in items {
                    put_u32(&mut buf, id.0);
                }
                TAG_UNION_UP
            }
            Message::GradientUp {
                user_grad,
                repr_grads,
                weighted_loss,
                weight,
            } => {
                put_u32(&mut buf, user_grad.len() as u32);
                put_u32(&mut buf, repr_grads.len() as u32);
                let dim = repr_grads.first().map(|(_, v)| v.len()).unwrap_or(0);
                put_u32(&mut buf, dim as u32);
                put_f64(&mut buf, *weighted_loss);
                put_f64(&mut buf, *weight);
                put_f64s(&mut buf, user_grad);
                for (id, v) in repr_grads {
                    put_u32(&mut buf, id.0);
                    put_f64s(&mut buf, v);
                }
                TAG_GRADIENT_UP
            }
            Message::WholeModelDown { encoder, user } => {
                put_u32(&mut buf, encoder.len() as u32);
                put_u32(&mut buf, user.len() as u32);
                put_f64s(&mut buf, encoder);
                put_f64s(&mut buf, user);
                TAG_WHOLE_MODEL_DOWN
            }
            Message::WholeGradUp {
                encoder_grad,
                user_grad,
                weighted_loss,
                weight,
            } => {
                put_u32(&mut buf, encoder_grad.len() as u32);
                put_u32(&mut buf, user_grad.len() as u32);
                put_f64(&mut buf, *weighted_loss);
                put_f64(&mut buf, *weight);
                put_f64s(&mut buf, encoder_grad);
                put_f64s(&mut buf, user_grad);
                TAG_WHOLE_GRAD_UP
            }
        };
        (tag, buf)
    }

    pub fn decode(tag: u16, payload: &[u8]) -> Result<Message, NetError> {
        let mut r = Reader::new(payload);
        let msg = match tag {
            TAG_KEY_ADVERT => Message::KeyAdvert(r.advert()),
            TAG_ADVERT_BUNDLE => {
                let n = r.u32() as usize;
                Message::AdvertBundle((0..n).map(|_| r.advert()).collect())
            }
            TAG_SHARE_DELIVER => {
                let owner = r.u32();
                let holder = r.u32();
                Message::ShareDeliver(ShareDeliver {
                    owner,
                    holder,
                    ciphertext: r.tail().to_vec(),
                })
            }
            TAG_MASKED_INPUT => {
                let owner = r.u32();
                let n = r.remaining() / 8;
                Message::MaskedInput(MaskedInput {
                    owner,
                    vector: (0..n).map(|_| r.u64()).collect(),
                })
            }
            TAG_SHARE_REQUEST => Message::ShareRequest(ShareRequest {
                target: r.u32(),
                kind: byte_kind(r.take(1)[0]),
            }),
            TAG_SHARE_RESPONSE => {
                let target = r.u32();
                let kind = byte_kind(r.take(1)[0]);
                let index = r.u64();
                Message::ShareResponse(ShareResponse {
                    target,
                    kind,
                    share: Share {
                        index,
                        payload: r.tail().to_vec(),
                    },
                })
            }
            TAG_USER_MODEL_DOWN => {
                let n = r.remaining() / 8;
                Message::UserModelDown(r.f64s(n))
            }
            TAG_REPRS_DOWN => {
                let n = r.u32() as usize;
                let dim = r.u32() as usize;
                Message::ReprsDown(
                    (0..n)
                        .map(|_| (ItemId(r.u32()), r.f64s(dim)))
                        .collect(),
                )
            }
            TAG_UNION_UP => {
                let n = r.remaining() / 4;
                Message::UnionUp((0..n).map(|_| ItemId(r.u32())).collect())
            }
            TAG_GRADIENT_UP => {
                let user_len = r.u32() as usize;
                let n_items = r.u32() as usize;
                let dim = r.u32() as usize;
                let weighted_loss = r.f64();
                let weight = r.f64();
                let user_grad = r.f64s(user_len);
                let repr_grads = (0..n_items)
                    .map(|_| (ItemId(r.u32()), r.f64s(dim)))
                    .collect();
                Message::GradientUp {
                    user_grad,
                    repr_grads,
                    weighted_loss,
                    weight,
                }
            }
            TAG_WHOLE_MODEL_DOWN => {
                let enc_len = r.u32() as usize;
                let user_len = r.u32() as usize;
                Message::WholeModelDown {
                    encoder: r.f64s(enc_len),
                    user: r.f64s(user_len),
                }
            }
            TAG_WHOLE_GRAD_UP => {
                let enc_len = r.u32() as usize;
                let user_len = r.u32() as usize;
                let weighted_loss = r.f64();
                let weight = r.f64();
                Message::WholeGradUp {
                    encoder_grad: r.f64s(enc_len),
                    user_grad: r.f64s(user_len),
                    weighted_loss,
                    weight,
                }
            }
            other => return Err(NetError::UnknownParty(other as u32)),
        };
        Ok(msg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn user_model_payload_is_eight_bytes_per_value() {
        let msg = Message::UserModelDown(vec![0.5; 400]);
        let (_, payload) = msg.encode();
        assert_eq!(payload.len(), 3200);
    }

    #[test]
    fn repr_payload_scales_linearly_with_the_dimension() {
        use crate::model::ItemId;
        let payload_len = |d: usize| {
            let items: Vec<(ItemId, Vec<f64>)> =
                (0..5u32).map(|i| (ItemId(i), vec![0.5; d])).collect();
            Message::ReprsDown(items).encode().1.len()
        };
        let fixed = 4 + 4 + 5 * 4; // counts and ids
        assert_eq!(payload_len(16) - fixed, 5 * 16 * 8);
        assert_eq!(payload_len(32) - fixed, 2 * (payload_len(16) - fixed));
    }

    #[test]
    fn share_messages_roundtrip() {
        let msg = Message::ShareResponse(ShareResponse {
            target: 7,
            kind: ShareKind::MaskKey,
            share: Share {
                index: 3,
                payload: vec![1, 2, 3, 4],
            },
        });
        let (tag, payload) = msg.encode();
        assert_eq!(Message::decode(tag, &payload).unwrap(), msg);
    }

    proptest! {
        #[test]
        fn gradient_up_roundtrips(
            user in proptest::collection::vec(-1.0f64..1.0, 0..20),
            items in proptest::collection::vec((0u32..100, proptest::collection::vec(-1.0f64..1.0, 4)), 0..10),
            wloss in -10.0f64..10.0,
            weight in 0.0f64..100.0
        ) {
            let msg = Message::GradientUp {
                user_grad: user,
                repr_grads: items.into_iter().map(|(id, v)| (ItemId(id), v)).collect(),
                weighted_loss: wloss,
                weight,
            };
            let (tag, payload) = msg.encode();
            prop_assert_eq!(Message::decode(tag, &payload).unwrap(), msg);
        }

        #[test]
        fn masked_input_roundtrips(
            owner in 0u32..100,
            vector in proptest::collection::vec(any::<u64>(), 0..50)
        ) {
            let msg = Message::MaskedInput(MaskedInput { owner, vector });
            let (tag, payload) = msg.encode();
            prop_assert_eq!(Message::decode(tag, &payload).unwrap(), msg);
        }
    }
}
