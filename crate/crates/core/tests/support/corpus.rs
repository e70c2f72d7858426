//! Seeded En/Vi sentence generator for tokenizer round trips.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const EN: &[&str] = &[
    "the", "weather", "is", "nice", "today", "I", "would", "like", "a", "cup", "of", "coffee",
    "where", "station", "train", "please", "thank", "you", "hospital", "doctor", "42", "km", "!",
    "?", ",", "Hanoi", "Saigon", "market", "price", "cheap",
];
const VI: &[&str] = &[
    "Tôi", "muốn", "một", "ly", "cà", "phê", "sữa", "đá", "Thời", "tiết", "hôm", "nay", "đẹp",
    "quá", "Nhà", "ga", "ở", "đâu", "Cảm", "ơn", "bạn", "nhiều", "bệnh", "viện", "Hà", "Nội",
    "giá", "rẻ", "Người", "Việt", "ăn", "phở", "ngữ", "nghĩa", "được",
];

pub fn sentence(rng: &mut ChaCha8Rng) -> String {
    let words = if rng.gen_bool(0.5) { EN } else { VI };
    let n = rng.gen_range(1..15);
    (0..n).map(|_| *words.choose(rng).unwrap()).collect::<Vec<_>>().join(" ")
}

