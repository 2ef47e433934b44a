#include "progvc/entcoder.hpp"

#include <cmath>
#include <string>

#include "progvc/error.hpp"

namespace progvc {

namespace {

constexpr std::uint32_t kTop = 1u << 24;

inline std::uint32_t split(std::uint32_t range, QProb p) {
    return static_cast<std::uint32_t>((static_cast<std::uint64_t>(range) * p.p16) >> 16);
}

} // namespace

QProb quantize_prob(double p) noexcept {
    double scaled = std::nearbyint(p * 65536.0);
    if (!(scaled >= 1.0)) scaled = 1.0; // also catches NaN
    if (scaled > 65535.0) scaled = 65535.0;
    return {static_cast<std::uint16_t>(scaled)};
}

void ArithmeticEncoder::encode(bool bit, QProb p) {
    const std::uint32_t bound = split(range_, p);
    if (bit) {
        range_ = bound;
    } else {
        low_ += bound;
        range_ -= bound;
    }
    while (range_ < kTop) {
        range_ <<= 8;
        shift_low();
    }
}

void ArithmeticEncoder::shift_low() {
    if (static_cast<std::uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
        const auto carry = static_cast<std::uint8_t>(low_ >> 32);
        std::uint8_t b = cache_;
        do {
            if (!first_) out_.push_back(static_cast<std::uint8_t>(b + carry));
            first_ = false;
            b = 0xFF;
        } while (--pending_ != 0);
        cache_ = static_cast<std::uint8_t>(low_ >> 24);
    }
    ++pending_;
    low_ = (low_ & 0x00FFFFFFu) << 8;
}

std::vector<std::uint8_t> ArithmeticEncoder::finish() {
    for (int i = 0; i < 5; ++i) shift_low();
    std::vector<std::uint8_t> out = std::move(out_);
    *this = ArithmeticEncoder{};
    return out;
}

ArithmeticDecoder::ArithmeticDecoder(std::span<const std::uint8_t> payload, std::uint32_t bit_count)
    : payload_(payload), limit_(bit_count) {
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

std::uint8_t ArithmeticDecoder::next_byte() {
    if (pos_ >= payload_.size())
        throw DecodeError("arithmetic decoder: payload truncated after " +
                          std::to_string(payload_.size()) + " bytes");
    return payload_[pos_++];
}

bool ArithmeticDecoder::decode(QProb p) {
    if (decoded_ >= limit_)
        throw ProtocolError("arithmetic decoder: more than " + std::to_string(limit_) +
                            " bits requested");
    const std::uint32_t bound = split(range_, p);
    bool bit;
    if (code_ < bound) {
        range_ = bound;
        bit = true;
    } else {
        code_ -= bound;
        range_ -= bound;
        bit = false;
    }
    while (range_ < kTop) {
        range_ <<= 8;
        code_ = (code_ << 8) | next_byte();
    }
    ++decoded_;
    return bit;
}

CodedSegment ac_encode(const std::vector<bool>& bits, std::span<const QProb> probs) {
    if (bits.size() != probs.size())
        throw ContractError("ac_encode: " + std::to_string(bits.size()) + " bits but " +
                            std::to_string(probs.size()) + " probabilities");
    if (bits.size() > 0xFFFFFFFFu) throw ContractError("ac_encode: segment too long");
    ArithmeticEncoder enc;
    for (std::size_t i = 0; i < bits.size(); ++i) enc.encode(bits[i], probs[i]);
    return {enc.finish(), static_cast<std::uint32_t>(bits.size())};
}

std::vector<bool> ac_decode(const CodedSegment& segment, const ProbProvider& provider) {
    ArithmeticDecoder dec(segment.payload, segment.bit_count);
    std::vector<bool> out;
    out.reserve(segment.bit_count);
    for (std::uint32_t i = 0; i < segment.bit_count; ++i) out.push_back(dec.decode(provider(i, out)));
    if (dec.consumed() != segment.payload.size())
        throw DecodeError("arithmetic decoder: " +
                          std::to_string(segment.payload.size() - dec.consumed()) +
                          " trailing payload bytes");
    return out;
}

std::vector<bool> ac_decode(const CodedSegment& segment, std::span<const QProb> probs) {
    if (probs.size() != segment.bit_count)
        throw ContractError("ac_decode: " + std::to_string(probs.size()) +
                            " probabilities for " + std::to_string(segment.bit_count) + " bits");
    return ac_decode(segment, [&](std::size_t i, const std::vector<bool>&) { return probs[i]; });
}

double shannon_bits(const std::vector<bool>& bits, std::span<const QProb> probs) {
    double total = 0.0;
    for (std::size_t i = 0; i < bits.size(); ++i) {
        const double p1 = probs[i].p16 / 65536.0;
        total -= std::log2(bits[i] ? p1 : 1.0 - p1);
    }
    return total;
}

} // namespace progvc
