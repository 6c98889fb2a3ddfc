package com.example.util;

import java.nio.charset.StandardCharsets;
import java.security.MessageDigest;
import javax.crypto.Cipher;
import javax.crypto.spec.SecretKeySpec;

public class CryptoUtil {
    private final byte[] key;

    public CryptoUtil(byte[] key) {
        this.key = key;
    }

    public static String md5Hex(String text) throws Exception {
        MessageDigest md = MessageDigest.getInstance("MD5");
        byte[] d = md.digest(text.getBytes(StandardCharsets.UTF_8));
        return HexFormat.of().formatHex(d);
    }

    public static String sha1Hex(byte[] data) throws Exception {
        MessageDigest md = MessageDigest.getInstance("SHA-1");
        return HexFormat.of().formatHex(md.digest(data));
    }

    public static String sha256Hex(byte[] data) throws Exception {
        MessageDigest md = MessageDigest.getInstance("SHA-256");
        return HexFormat.of().formatHex(md.digest(data));
    }

    public static byte[] aesEncrypt(byte[] key, byte[] plain) throws Exception {
        Cipher c = Cipher.getInstance("AES/ECB/PKCS5Padding");
        c.init(Cipher.ENCRYPT_MODE, new SecretKeySpec(key, "AES"));
        return c.doFinal(plain);
    }

    /* salted password digest */
    public static String hashPassword(String password, String salt) throws Exception {
        return sha256Hex((salt + password).getBytes(StandardCharsets.UTF_8));
    }

    public byte[] encryptField(byte[] value) throws Exception {
        return aesEncrypt(this.key, value);
    }
}
