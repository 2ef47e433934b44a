#pragma once

// Binary range coder driven by externally supplied 16-bit probabilities.
//
// 32-bit range, 64-bit low with carry propagation through a cached byte and a
// run of pending 0xFF bytes. The first byte of a conventional carry-cache
// coder is always zero and is not emitted. Every segment ends with a 4-byte
// flush, and the decoder consumes exactly as many bytes as the encoder wrote,
// so a shortened payload is always detected.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace progvc {

// p(bit = 1) = p16 / 65536, p16 in [1, 65535].
struct QProb {
    std::uint16_t p16 = 32768;

    friend bool operator==(const QProb&, const QProb&) = default;
};

QProb quantize_prob(double p) noexcept;

struct CodedSegment {
    std::vector<std::uint8_t> payload;
    std::uint32_t bit_count = 0;

    friend bool operator==(const CodedSegment&, const CodedSegment&) = default;
};

class ArithmeticEncoder {
public:
    void encode(bool bit, QProb p);
    // Flushes and returns the payload; the encoder is left empty.
    std::vector<std::uint8_t> finish();

private:
    void shift_low();

    std::uint64_t low_ = 0;
    std::uint32_t range_ = 0xFFFFFFFFu;
    std::uint8_t cache_ = 0;
    std::uint64_t pending_ = 1;
    bool first_ = true;
    std::vector<std::uint8_t> out_;
};

class ArithmeticDecoder {
public:
    ArithmeticDecoder(std::span<const std::uint8_t> payload, std::uint32_t bit_count);

    bool decode(QProb p);
    std::uint32_t decoded() const noexcept { return decoded_; }
    std::size_t consumed() const noexcept { return pos_; }

private:
    std::uint8_t next_byte();

    std::span<const std::uint8_t> payload_;
    std::uint32_t limit_;
    std::uint32_t decoded_ = 0;
    std::size_t pos_ = 0;
    std::uint32_t code_ = 0;
    std::uint32_t range_ = 0xFFFFFFFFu;
};

CodedSegment ac_encode(const std::vector<bool>& bits, std::span<const QProb> probs);

using ProbProvider = std::function<QProb(std::size_t index, const std::vector<bool>& decoded)>;

// Decodes exactly segment.bit_count bits. Throws DecodeError if the payload is
// too short or has bytes left over.
std::vector<bool> ac_decode(const CodedSegment& segment, const ProbProvider& provider);
std::vector<bool> ac_decode(const CodedSegment& segment, std::span<const QProb> probs);

// Sum of -log2 of the coded symbol probabilities.
double shannon_bits(const std::vector<bool>& bits, std::span<const QProb> probs);

} // namespace progvc
