#include "cnmws/rng.hpp"

namespace cnmws {

Engine make_stream(std::uint64_t seed, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32),
                      0x6d7773u};
    return Engine(seq);
}

} // namespace cnmws
