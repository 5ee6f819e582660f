"""H3-class hashing and the time-interleaved dual counting Bloom filter.

The dual filter gives activation-count estimates that may over-count due
to aliasing but never under-count within the answering filter's lifetime
(two epochs). That one-sided error is what the blacklisting logic relies
on, so the tests here are mostly about the no-false-negative property.
"""

import hashlib
import random

ROW_ID_BITS = 32  # row ids are bank-local or rank-local; 32 bits is ample


def derive_seed(master_seed, label):
    """Stable 64-bit child seed for a named subsystem."""
    digest = hashlib.sha256(f"{master_seed}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


class H3Hash:
    """H3-class universal hash: each output bit is a parity of masked input bits.

    Realized as byte-wise tabulation (the XOR of per-byte lookup tables is
    exactly a GF(2) matrix product), which keeps per-call cost flat.
    """

    def __init__(self, seed, output_bits, static_shift=0):
        self.seed = seed
        self.output_bits = output_bits
        self.static_shift = static_shift
        rng = random.Random(seed)
        n_bytes = (ROW_ID_BITS + static_shift + 7) // 8
        mask = (1 << output_bits) - 1
        # rows of the GF(2) matrix, one 64-bit word per input bit
        columns = [rng.getrandbits(output_bits) for _ in range(8 * n_bytes)]
        self.tables = []
        for byte_idx in range(n_bytes):
            table = []
            for byte_val in range(256):
                acc = 0
                for bit in range(8):
                    if byte_val >> bit & 1:
                        acc ^= columns[8 * byte_idx + bit]
                table.append(acc & mask)
            self.tables.append(table)

    def __call__(self, row_id):
        x = row_id << self.static_shift
        acc = 0
        for table in self.tables:
            acc ^= table[x & 0xFF]
            x >>= 8
        return acc


class CountingBloomFilter:
    """Saturating counting Bloom filter queried with a min-of-counters rule."""

    N_HASHES = 4

    def __init__(self, size, counter_width, seed):
        if size & (size - 1):
            raise ValueError("filter size must be a power of two")
        self.size = size
        self.counter_width = counter_width
        self.max_count = (1 << counter_width) - 1
        self.counters = [0] * size
        self.reseed(seed)

    def reseed(self, seed):
        self.seed = seed
        bits = (self.size - 1).bit_length()
        self.hashes = [
            H3Hash(derive_seed(seed, f"h3/{i}"), bits, static_shift=i)
            for i in range(self.N_HASHES)
        ]

    def indexes(self, row_id):
        return [h(row_id) for h in self.hashes]

    def insert(self, row_id):
        for idx in self.indexes(row_id):
            c = self.counters[idx]
            if c < self.max_count:
                self.counters[idx] = c + 1

    def test(self, row_id):
        return min(self.counters[idx] for idx in self.indexes(row_id))

    def clear(self, new_seed):
        self.counters = [0] * self.size
        self.reseed(new_seed)


class DualCbf:
    """Two counting Bloom filters cleared in a time-interleaved manner.

    Every insert updates both filters; only the active filter answers
    tests. At each epoch boundary the active filter is cleared and
    reseeded, and the roles swap, so the answering filter always holds the
    current and previous epoch's inserts (a two-epoch lifetime).
    """

    def __init__(self, size, counter_width, epoch_len, seed, start_time=0):
        self.epoch_len = epoch_len
        self._seed_rng = random.Random(derive_seed(seed, "dcbf-reseed"))
        self.filter_a = CountingBloomFilter(size, counter_width, self._seed_rng.getrandbits(64))
        self.filter_b = CountingBloomFilter(size, counter_width, self._seed_rng.getrandbits(64))
        self.active = 0  # index of the filter answering tests
        self.last_clear = start_time

    @property
    def filters(self):
        return (self.filter_a, self.filter_b)

    def insert(self, row_id):
        self.filter_a.insert(row_id)
        self.filter_b.insert(row_id)

    def test(self, row_id):
        return self.filters[self.active].test(row_id)

    def due_for_swap(self, now):
        return now - self.last_clear >= self.epoch_len

    def clear_and_swap(self, now, rng=None):
        if now - self.last_clear < self.epoch_len:
            raise ValueError("swap requested before the epoch elapsed")
        rng = rng or self._seed_rng
        self.filters[self.active].clear(rng.getrandbits(64))
        self.active ^= 1
        self.last_clear = now
