package com.demo;

public class Util {
    public static int twice(int value) {
        return value * 2;
    }

    public static int shrink(int value, int limit) {
        int result = value;
        while (result > limit) {
            result = result / 2;
        }
        return result;
    }
}
