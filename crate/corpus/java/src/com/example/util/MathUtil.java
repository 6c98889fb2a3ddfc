package com.example.util;

import java.util.ArrayList;
import java.util.List;

public class MathUtil {
    public static double hypot(double x, double y) {
        return Math.hypot(x, y);
    }

    public static long max2(long a, long b) {
        return a > b ? a : b;
    }

    public static long max3(long a, long b, long c) {
        return max2(max2(a, b), c);
    }

    // splits on commas, keeps empty fields
    public static List<String> split(String line) {
        List<String> out = new ArrayList<>();
        int start = 0;
        for (int i = 0; i < line.length(); i++) {
            if (line.charAt(i) == ',') {
                out.add(line.substring(start, i));
                start = i + 1;
            }
        }
        out.add(line.substring(start));
        return out;
    }
}
