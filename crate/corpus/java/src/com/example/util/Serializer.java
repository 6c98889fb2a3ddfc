package com.example.util;

import java.nio.ByteBuffer;

public final class Serializer {
    private Serializer() {}

    public static String toJson(String name, int count) {
        return String.format("{\"name\": \"%s\", \"count\": %d}", name, count);
    }

    public static int readInt(byte[] data) {
        if (data.length < 4) {
            return -1;
        }
        return ByteBuffer.wrap(data).getInt();
    }

    public static byte[] writeInt(int value) {
        return ByteBuffer.allocate(4).putInt(value).array();
    }
}
