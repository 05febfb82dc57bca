"""Stand-in decoder plugin: the test ".flac" files carry WAV bytes."""
from ocspoof.protocol import decode_wav


def decode(data: bytes):
    return decode_wav(data)
