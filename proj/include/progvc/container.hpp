#pragma once

// Progressive bitstream container ("PGVC"). All integers little-endian.
//
//   magic "PGVC" | version u8 | W u32 | H u32 | T_total u32
//   pad_right u16 | pad_bottom u16 | s u8 | tau u8 | K u8 | kappa_P u8
//   K x (w u16, h u16, L u16) | model hash u64 | segment count u16
//   count x (bit count u32, byte length u32) | payloads in index order
//
// Segments are the K intra scales followed by the first kappa_P inter scales.
// W and H are the unpadded clip dimensions.

#include <cstdint>
#include <span>
#include <vector>

#include "progvc/entcoder.hpp"
#include "progvc/msrq.hpp"

namespace progvc {

inline constexpr std::uint8_t kContainerVersion = 1;

struct ContainerHeader {
    std::uint8_t version = kContainerVersion;
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::uint32_t frames = 0;
    std::uint16_t pad_right = 0;
    std::uint16_t pad_bottom = 0;
    std::uint8_t spatial = 4;
    std::uint8_t temporal = 1;
    std::uint8_t kappa = 0;
    ScaleSchedule schedule;
    std::uint64_t model_hash = 0;

    std::size_t scales() const { return schedule.size(); }
    std::size_t segment_count() const { return schedule.size() + kappa; }
    // Bytes up to and including the segment index.
    std::size_t encoded_size() const;

    friend bool operator==(const ContainerHeader&, const ContainerHeader&) = default;
};

struct Container {
    ContainerHeader header;
    std::vector<CodedSegment> segments;

    std::size_t payload_bytes() const;

    friend bool operator==(const Container&, const Container&) = default;
};

std::vector<std::uint8_t> write_container(const Container& container);
Container read_container(std::span<const std::uint8_t> bytes);

// Drops inter segments beyond new_kappa and rewrites the header.
std::vector<std::uint8_t> truncate(std::span<const std::uint8_t> bytes, std::size_t new_kappa);

} // namespace progvc
